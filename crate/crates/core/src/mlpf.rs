//! The 98-10-1 multilayer perceptron filter.
//!
//! Integer inference runs entirely in code space: a product of two codes with
//! `fa` and `fb` fraction bits carries `fa + fb` fraction bits and is aligned to
//! the accumulator's 9 fraction bits before a saturating add. Accumulation
//! starts from the aligned bias and proceeds in input index order, so
//! saturation (when it happens) is deterministic.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::Label;
use crate::exec::Exec;
use crate::qarith::{align, Accumulator, QFormat, ACC};
use crate::tpi::{InputVector, INPUT_LEN};

pub const HIDDEN: usize = 10;
pub const PARAM_COUNT: usize = INPUT_LEN * HIDDEN + HIDDEN + HIDDEN + 1;
pub const ARCH_TAG: &str = "98-10-1";
pub const LAYOUT_TAG: &str = "ages49-pol49-rowmajor";
pub const FILE_VERSION: u32 = 1;

/// Number formats of one network. Inputs, weights and biases share one format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelFormats {
    pub weight: QFormat,
    pub hidden: QFormat,
    pub acc: QFormat,
}

impl ModelFormats {
    /// `bits` fraction bits for weights/inputs (plus sign) and hidden units.
    pub fn with_bits(bits: u8) -> Self {
        ModelFormats {
            weight: QFormat::signed_fraction(bits),
            hidden: QFormat::unsigned_fraction(bits),
            acc: ACC,
        }
    }

    pub fn bits(&self) -> u8 {
        self.weight.fraction_bits() as u8
    }
}

impl Default for ModelFormats {
    fn default() -> Self {
        ModelFormats::with_bits(4)
    }
}

/// Quantized parameters. `w1` is indexed `[input][hidden]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpfWeights {
    pub w1: Vec<[i64; HIDDEN]>,
    pub b1: [i64; HIDDEN],
    pub w2: [i64; HIDDEN],
    pub b2: i64,
    pub formats: ModelFormats,
    pub layout: String,
}

impl MlpfWeights {
    pub fn zeros(formats: ModelFormats) -> Self {
        MlpfWeights {
            w1: vec![[0; HIDDEN]; INPUT_LEN],
            b1: [0; HIDDEN],
            w2: [0; HIDDEN],
            b2: 0,
            formats,
            layout: LAYOUT_TAG.to_owned(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() * HIDDEN + self.b1.len() + self.w2.len() + 1
    }

    pub fn codes(&self) -> impl Iterator<Item = i64> + '_ {
        self.w1
            .iter()
            .flatten()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
            .copied()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layout != LAYOUT_TAG {
            return Err(Error::Layout {
                expected: LAYOUT_TAG.into(),
                found: self.layout.clone(),
            });
        }
        if self.w1.len() != INPUT_LEN || self.param_count() != PARAM_COUNT {
            return Err(Error::WeightFile(format!(
                "expected {PARAM_COUNT} parameters, found {}",
                self.param_count()
            )));
        }
        if let Some(bad) = self.codes().find(|&c| !self.formats.weight.contains(c)) {
            return Err(Error::WeightFile(format!(
                "code {bad} outside {} range",
                self.formats.weight
            )));
        }
        Ok(())
    }

    /// Fraction of parameters whose code is zero.
    pub fn sparsity(&self) -> f64 {
        let zeros = self.codes().filter(|&c| c == 0).count();
        zeros as f64 / self.param_count() as f64
    }

    pub fn dequantize(&self) -> FloatWeights {
        let v = |c: i64| self.formats.weight.value(c);
        FloatWeights {
            w1: self.w1.iter().map(|row| row.map(v)).collect(),
            b1: self.b1.map(v),
            w2: self.w2.map(v),
            b2: v(self.b2),
        }
    }
}

/// Output unit activation in the accumulator format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Logit {
    pub code: i64,
}

impl Logit {
    pub fn value(self) -> f64 {
        ACC.value(self.code)
    }
}

/// Decision threshold, same fixed-point format as [`Logit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Threshold {
    pub code: i16,
}

impl Threshold {
    pub fn new(code: i16) -> Self {
        Threshold { code }
    }

    /// Nearest threshold code for a real-valued logit level.
    pub fn from_value(v: f64) -> Self {
        Threshold {
            code: ACC.quantize(v).code as i16,
        }
    }
}

/// Signal iff `logit >= threshold`.
pub fn classify(logit: Logit, thr: Threshold) -> Label {
    Label::from_signal(logit.code >= i64::from(thr.code))
}

/// Every intermediate of one integer forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Forward {
    pub pre_activation: [i64; HIDDEN],
    pub hidden: [i64; HIDDEN],
    pub logit: Logit,
    pub saturations: u32,
}

/// Integer forward pass over already-quantized input codes.
pub fn forward_codes(w: &MlpfWeights, x: &[i64; INPUT_LEN]) -> Forward {
    let f = w.formats;
    let wf = f.weight.fraction_bits();
    let af = f.acc.fraction_bits();
    let hf = f.hidden.fraction_bits();
    let mut pre_activation = [0; HIDDEN];
    let mut hidden = [0; HIDDEN];
    let mut saturations = 0;
    for j in 0..HIDDEN {
        let mut acc = Accumulator::with_code(f.acc, align(w.b1[j], wf, af));
        for (row, &xi) in w.w1.iter().zip(x) {
            // a zero term cannot change a saturating sum
            if xi != 0 {
                acc.add(align(row[j] * xi, 2 * wf, af));
            }
        }
        saturations += acc.saturations();
        pre_activation[j] = acc.code();
        // quantized ReLU: negatives to 0, then round and saturate into the hidden format
        hidden[j] = f.hidden.requantize(acc.code().max(0), af);
    }
    let mut out = Accumulator::with_code(f.acc, align(w.b2, wf, af));
    for (wj, hj) in w.w2.iter().zip(&hidden) {
        out.add(align(wj * hj, wf + hf, af));
    }
    saturations += out.saturations();
    Forward {
        pre_activation,
        hidden,
        logit: Logit { code: out.code() },
        saturations,
    }
}

/// Bit-exact quantized inference.
pub fn infer_quantized(w: &MlpfWeights, x: &InputVector) -> Result<Logit> {
    if w.layout != LAYOUT_TAG {
        return Err(Error::Layout {
            expected: LAYOUT_TAG.into(),
            found: w.layout.clone(),
        });
    }
    Ok(forward_codes(w, &x.quantized(w.formats.weight)).logit)
}

pub fn infer_batch(w: &MlpfWeights, xs: &[InputVector], exec: Exec) -> Result<Vec<Logit>> {
    if w.layout != LAYOUT_TAG {
        return Err(Error::Layout {
            expected: LAYOUT_TAG.into(),
            found: w.layout.clone(),
        });
    }
    let fmt = w.formats.weight;
    Ok(exec.map(xs, |x| forward_codes(w, &x.quantized(fmt)).logit))
}

/// Real-valued parameters, same layout as [`MlpfWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct FloatWeights {
    pub w1: Vec<[f64; HIDDEN]>,
    pub b1: [f64; HIDDEN],
    pub w2: [f64; HIDDEN],
    pub b2: f64,
}

impl FloatWeights {
    pub fn zeros() -> Self {
        FloatWeights {
            w1: vec![[0.0; HIDDEN]; INPUT_LEN],
            b1: [0.0; HIDDEN],
            w2: [0.0; HIDDEN],
            b2: 0.0,
        }
    }

    /// Quantize every parameter into `formats.weight`.
    pub fn quantize(&self, formats: ModelFormats) -> MlpfWeights {
        let q = |v: f64| formats.weight.quantize(v).code;
        MlpfWeights {
            w1: self.w1.iter().map(|row| row.map(q)).collect(),
            b1: self.b1.map(q),
            w2: self.w2.map(q),
            b2: q(self.b2),
            formats,
            layout: LAYOUT_TAG.to_owned(),
        }
    }
}

/// dense -> ReLU -> dense in real arithmetic; returns the pre-sigmoid logit.
pub fn float_logit(w: &FloatWeights, x: &[f64; INPUT_LEN]) -> f64 {
    let mut out = w.b2;
    for j in 0..HIDDEN {
        let mut a = w.b1[j];
        for (row, xi) in w.w1.iter().zip(x) {
            a += row[j] * xi;
        }
        out += w.w2[j] * a.max(0.0);
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Floating-point reference path with the sigmoid output kept.
pub fn infer_float(w: &FloatWeights, x: &[f64; INPUT_LEN]) -> f64 {
    sigmoid(float_logit(w, x))
}

pub fn save_weights(path: &Path, w: &MlpfWeights) -> Result<()> {
    fs::write(path, weights_to_string(w)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<MlpfWeights> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    weights_from_str(&text)
}

fn join(row: &[i64]) -> String {
    row.iter().map(i64::to_string).collect::<Vec<_>>().join(" ")
}

pub fn weights_to_string(w: &MlpfWeights) -> String {
    let f = w.formats;
    let mut s = String::new();
    let _ = writeln!(s, "version={FILE_VERSION}");
    let _ = writeln!(s, "arch={ARCH_TAG}");
    let _ = writeln!(s, "layout={}", w.layout);
    let _ = writeln!(s, "wfmt={}", f.weight);
    let _ = writeln!(s, "afmt={}/{}", f.hidden, f.acc);
    s.push_str("[w1]\n");
    for row in &w.w1 {
        let _ = writeln!(s, "{}", join(row));
    }
    let _ = writeln!(s, "[b1]\n{}", join(&w.b1));
    s.push_str("[w2]\n");
    for c in &w.w2 {
        let _ = writeln!(s, "{c}");
    }
    let _ = writeln!(s, "[b2]\n{}", w.b2);
    s
}

pub fn weights_from_str(text: &str) -> Result<MlpfWeights> {
    let err = |m: String| Error::WeightFile(m);
    let mut header = std::collections::HashMap::new();
    let mut sections: Vec<(String, Vec<Vec<i64>>)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push((name.to_owned(), Vec::new()));
        } else if let Some((_, rows)) = sections.last_mut() {
            let row = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<i64>()
                        .map_err(|_| err(format!("line {}: bad integer `{t}`", n + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        } else if let Some((k, v)) = line.split_once('=') {
            header.insert(k.trim().to_owned(), v.trim().to_owned());
        } else {
            return Err(err(format!("line {}: unexpected `{line}`", n + 1)));
        }
    }
    let get = |k: &str| {
        header
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| err(format!("missing `{k}`")))
    };
    if get("version")? != FILE_VERSION.to_string() {
        return Err(err(format!("unsupported version {}", get("version")?)));
    }
    if get("arch")? != ARCH_TAG {
        return Err(err(format!("unsupported architecture {}", get("arch")?)));
    }
    let layout = get("layout")?.to_owned();
    let weight = QFormat::parse_tag(get("wfmt")?)?;
    let (hidden, acc) = get("afmt")?
        .split_once('/')
        .ok_or_else(|| err("afmt must be `<hidden>/<accumulator>`".into()))?;
    let formats = ModelFormats {
        weight,
        hidden: QFormat::parse_tag(hidden)?,
        acc: QFormat::parse_tag(acc)?,
    };
    if formats.acc != ACC {
        return Err(err(format!(
            "unsupported accumulator format {}",
            formats.acc
        )));
    }

    let total: usize = sections.iter().flat_map(|(_, r)| r).map(Vec::len).sum();
    if total != PARAM_COUNT {
        return Err(err(format!(
            "expected {PARAM_COUNT} parameters, found {total}"
        )));
    }
    let section = |name: &str| -> Result<&Vec<Vec<i64>>> {
        sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r)
            .ok_or_else(|| err(format!("missing section [{name}]")))
    };
    let flat = |name: &str, len: usize| -> Result<Vec<i64>> {
        let v: Vec<i64> = section(name)?.iter().flatten().copied().collect();
        if v.len() != len {
            return Err(err(format!(
                "[{name}] needs {len} values, found {}",
                v.len()
            )));
        }
        Ok(v)
    };
    let rows = section("w1")?;
    if rows.len() != INPUT_LEN || rows.iter().any(|r| r.len() != HIDDEN) {
        return Err(err(format!("[w1] must be {INPUT_LEN} rows of {HIDDEN}")));
    }
    let to_arr = |v: &[i64]| -> [i64; HIDDEN] { v.try_into().expect("length checked") };
    let w = MlpfWeights {
        w1: rows.iter().map(|r| to_arr(r)).collect(),
        b1: to_arr(&flat("b1", HIDDEN)?),
        w2: to_arr(&flat("w2", HIDDEN)?),
        b2: flat("b2", 1)?[0],
        formats,
        layout,
    };
    w.validate()?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tpi::PATCH_CELLS;

    #[test]
    fn parameter_count() {
        assert_eq!(PARAM_COUNT, 1001);
        assert_eq!(
            MlpfWeights::zeros(ModelFormats::default()).param_count(),
            1001
        );
    }

    #[test]
    fn zero_network_gives_zero_logit() {
        let w = MlpfWeights::zeros(ModelFormats::default());
        let mut x = InputVector::lone(1);
        x.ages[3] = 9;
        assert_eq!(infer_quantized(&w, &x).unwrap(), Logit { code: 0 });
        assert_eq!(infer_float(&w.dequantize(), &x.real()), 0.5);
    }

    #[test]
    fn bias_only_hidden_layer() {
        let mut w = MlpfWeights::zeros(ModelFormats::default());
        w.b1 = [15; HIDDEN];
        w.w2 = [15; HIDDEN];
        let logit = infer_quantized(&w, &InputVector::lone(-1)).unwrap();
        assert_eq!(logit.code, 4500);
        assert_eq!(logit.value(), 8.7890625);
    }

    #[test]
    fn saturation_is_counted() {
        let mut w = MlpfWeights::zeros(ModelFormats::default());
        for row in w.w1.iter_mut() {
            row[0] = 15;
        }
        let mut x = InputVector::lone(1);
        x.ages = [15; PATCH_CELLS];
        x.polarities = [1; PATCH_CELLS];
        let f = forward_codes(&w, &x.quantized(w.formats.weight));
        assert_eq!(f.pre_activation[0], ACC.code_max());
        assert!(f.saturations > 0);
        assert_eq!(f.hidden[0], 15);
    }

    #[test]
    fn classify_boundary_is_inclusive() {
        assert_eq!(
            classify(Logit { code: 0 }, Threshold::new(0)),
            Label::Signal
        );
        assert_eq!(
            classify(Logit { code: -1 }, Threshold::new(0)),
            Label::Noise
        );
        assert_eq!(Threshold::from_value(0.5).code, 256);
    }

    #[test]
    fn sigmoid_saturates() {
        let mut w = FloatWeights::zeros();
        let mut prev = 0.5;
        for b in [1.0, 5.0, 20.0, 40.0] {
            w.b2 = b;
            let p = infer_float(&w, &[0.0; INPUT_LEN]);
            assert!(p > prev && p <= 1.0);
            prev = p;
        }
        assert!(prev > 1.0 - 1e-15);
    }

    #[test]
    fn sparsity_bounds() {
        let mut w = MlpfWeights::zeros(ModelFormats::default());
        assert_eq!(w.sparsity(), 1.0);
        w.w1.iter_mut().flatten().for_each(|c| *c = 3);
        w.b1 = [1; HIDDEN];
        w.w2 = [-2; HIDDEN];
        w.b2 = 5;
        assert_eq!(w.sparsity(), 0.0);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut w = MlpfWeights::zeros(ModelFormats::default());
        w.layout = "pol49-ages49".into();
        assert!(matches!(
            infer_quantized(&w, &InputVector::lone(1)),
            Err(Error::Layout { .. })
        ));
    }

    fn sample() -> MlpfWeights {
        let mut w = MlpfWeights::zeros(ModelFormats::default());
        for (i, row) in w.w1.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                *c = ((i * 7 + j * 3) % 32) as i64 - 16;
            }
        }
        w.b1 = [1, -2, 3, -4, 5, -6, 7, -8, 9, -10];
        w.w2 = [15, -16, 0, 1, 2, 3, 4, 5, 6, 7];
        w.b2 = -3;
        w
    }

    #[test]
    fn file_round_trip() {
        let w = sample();
        assert_eq!(weights_from_str(&weights_to_string(&w)).unwrap(), w);
        let w2 = sample().dequantize().quantize(ModelFormats::with_bits(2));
        assert_eq!(weights_from_str(&weights_to_string(&w2)).unwrap(), w2);
    }

    #[test]
    fn file_errors() {
        let text = weights_to_string(&sample());
        // drop the final b2 value: 1000 parameters
        let short = text.trim_end().rsplit_once('\n').unwrap().0.to_owned() + "\n";
        let e = weights_from_str(&short).unwrap_err().to_string();
        assert!(e.contains("1001") && e.contains("1000"), "{e}");

        let bad_code = text.replacen("[b2]\n-3", "[b2]\n16", 1);
        let e = weights_from_str(&bad_code).unwrap_err().to_string();
        assert!(e.contains("outside"), "{e}");

        let bad_version = text.replacen("version=1", "version=2", 1);
        assert!(weights_from_str(&bad_version)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn file_header_matches_format() {
        let text = weights_to_string(&sample());
        let head: Vec<&str> = text.lines().take(6).collect();
        assert_eq!(
            head,
            [
                "version=1",
                "arch=98-10-1",
                "layout=ages49-pol49-rowmajor",
                "wfmt=s4",
                "afmt=u4/s16q9",
                "[w1]"
            ]
        );
    }
}
