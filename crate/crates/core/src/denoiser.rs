//! Per-event orchestration: extract features, infer, classify, then update the
//! TPI. Also owns the decision CSV shared with the baseline filter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{Event, Label, Polarity, SensorGeometry};
use crate::exec::Exec;
use crate::mlpf::{classify, forward_codes, MlpfWeights, Threshold};
use crate::tpi::{AgeWindow, TpiMemory};

#[derive(Debug, Clone)]
pub struct DenoiseConfig {
    pub geometry: SensorGeometry,
    pub tau: AgeWindow,
    pub weights: MlpfWeights,
    pub threshold: Threshold,
    pub emit_scores: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub event: Event,
    pub predicted: Label,
    /// Logit code for the MLPF, negated neighbor delay for the BAF.
    pub score: Option<i64>,
}

/// A stateful event-by-event classifier.
pub trait EventFilter {
    fn process(&mut self, e: &Event) -> Result<Decision>;
}

/// One denoising session; owns its TPI.
#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: DenoiseConfig,
    tpi: TpiMemory,
}

impl Denoiser {
    pub fn new(cfg: DenoiseConfig) -> Result<Self> {
        cfg.weights.validate()?;
        Ok(Denoiser {
            tpi: TpiMemory::new(cfg.geometry),
            cfg,
        })
    }

    pub fn tpi(&self) -> &TpiMemory {
        &self.tpi
    }
}

impl EventFilter for Denoiser {
    fn process(&mut self, e: &Event) -> Result<Decision> {
        self.cfg.geometry.check(u32::from(e.x), u32::from(e.y))?;
        let x = self.tpi.extract_features(e, self.cfg.tau);
        let w = &self.cfg.weights;
        let logit = forward_codes(w, &x.quantized(w.formats.weight)).logit;
        let predicted = classify(logit, self.cfg.threshold);
        self.tpi.update(e)?;
        Ok(Decision {
            event: *e,
            predicted,
            score: self.cfg.emit_scores.then_some(logit.code),
        })
    }
}

/// Run a filter over a time-ordered stream. Ordering errors report the CSV
/// line the event would occupy (header is line 1).
pub fn run_filter<F: EventFilter>(filter: &mut F, events: &[Event]) -> Result<Vec<Decision>> {
    let mut prev = 0;
    events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if e.t_us < prev {
                return Err(Error::Ordering {
                    line: i as u64 + 2,
                    t_us: e.t_us,
                    prev_us: prev,
                });
            }
            prev = e.t_us;
            filter.process(e)
        })
        .collect()
}

pub fn denoise_stream(events: &[Event], cfg: &DenoiseConfig) -> Result<Vec<Decision>> {
    let mut d = Denoiser::new(cfg.clone())?;
    run_filter(&mut d, events)
}

/// Independent sessions, one per stream.
pub fn denoise_sessions(
    streams: &[Vec<Event>],
    cfg: &DenoiseConfig,
    exec: Exec,
) -> Vec<Result<Vec<Decision>>> {
    exec.map(streams, |s| denoise_stream(s, cfg))
}

pub fn write_decisions<W: Write>(sink: W, decisions: &[Decision]) -> Result<()> {
    let scores = decisions.first().is_some_and(|d| d.score.is_some());
    let labels = !decisions.is_empty() && decisions.iter().all(|d| d.event.label.is_some());
    let mut w = BufWriter::new(sink);
    let io = |e: std::io::Error| Error::io("<decision stream>", e);
    let mut header = String::from("t_us,x,y,p,pred");
    if scores {
        header.push_str(",logit");
    }
    if labels {
        header.push_str(",label");
    }
    writeln!(w, "{header}").map_err(io)?;
    for d in decisions {
        let e = &d.event;
        write!(
            w,
            "{},{},{},{},{}",
            e.t_us,
            e.x,
            e.y,
            e.polarity.bit(),
            d.predicted.bit()
        )
        .map_err(io)?;
        if scores {
            write!(w, ",{}", d.score.unwrap_or_default()).map_err(io)?;
        }
        if labels {
            write!(w, ",{}", e.label.map_or(0, Label::bit)).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_decisions_file(path: &Path, decisions: &[Decision]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_decisions(file, decisions)
}

/// Parse a decision CSV back. Columns are located by header name.
pub fn read_decisions<R: Read>(source: R) -> Result<Vec<Decision>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let required = ["t_us", "x", "y", "p", "pred"].map(|n| {
        col(n).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("decision file lacks `{n}` column"),
        })
    });
    let [t, x, y, p, pred] = required;
    let (t, x, y, p, pred) = (t?, x?, y?, p?, pred?);
    let (logit, label) = (col("logit"), col("label"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<i64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("bad field {}", i + 1),
                })
        };
        let event = Event {
            t_us: num(t)? as u64,
            x: num(x)? as u16,
            y: num(y)? as u16,
            polarity: Polarity::from_bit(num(p)? != 0),
            label: label
                .map(|i| num(i).map(|v| Label::from_signal(v != 0)))
                .transpose()?,
        };
        out.push(Decision {
            event,
            predicted: Label::from_signal(num(pred)? != 0),
            score: logit.map(num).transpose()?,
        });
    }
    Ok(out)
}

pub fn read_decisions_file(path: &Path) -> Result<Vec<Decision>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_decisions(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlpf::{infer_quantized, ModelFormats, HIDDEN};
    use crate::tpi::{InputVector, CENTER, PATCH_CELLS};

    fn weights() -> MlpfWeights {
        let mut w = MlpfWeights::zeros(ModelFormats::default());
        // hidden unit 0 listens to the center polarity and its left neighbor's age
        w.w1[PATCH_CELLS + CENTER][0] = 8;
        w.w1[CENTER - 1][1] = 15;
        w.b1 = [2; HIDDEN];
        w.w2 = [3, 15, 0, 0, 0, 0, 0, 0, 0, 0];
        w.b2 = -4;
        w
    }

    fn cfg(thr: i16) -> DenoiseConfig {
        DenoiseConfig {
            geometry: SensorGeometry::DAVIS346,
            tau: AgeWindow::default(),
            weights: weights(),
            threshold: Threshold::new(thr),
            emit_scores: true,
        }
    }

    fn stream() -> Vec<Event> {
        let mut v = Vec::new();
        for i in 0..200u64 {
            let x = (i * 37 % 340) as u16;
            let y = (i * 11 % 250) as u16;
            v.push(
                Event::new(i * 700, x, y, Polarity::from_bit(i % 3 == 0))
                    .labeled(Label::from_signal(i % 2 == 0)),
            );
            v.push(Event::new(i * 700 + 5, x + 1, y, Polarity::On).labeled(Label::Signal));
        }
        v
    }

    #[test]
    fn empty_stream() {
        assert!(denoise_stream(&[], &cfg(0)).unwrap().is_empty());
    }

    #[test]
    fn lone_event_matches_canonical_vector() {
        let e = Event::new(1234, 100, 80, Polarity::On);
        let d = denoise_stream(&[e], &cfg(0)).unwrap();
        let expect = infer_quantized(&weights(), &InputVector::lone(1)).unwrap();
        assert_eq!(d[0].score, Some(expect.code));
        assert_eq!(d[0].predicted, classify(expect, Threshold::new(0)));
    }

    #[test]
    fn deterministic_and_causal() {
        let s = stream();
        let full = denoise_stream(&s, &cfg(0)).unwrap();
        assert_eq!(full, denoise_stream(&s, &cfg(0)).unwrap());
        for cut in [1, 17, 200, 399] {
            assert_eq!(denoise_stream(&s[..cut], &cfg(0)).unwrap(), full[..cut]);
        }
        assert!(full.iter().any(|d| d.score != full[0].score));
    }

    #[test]
    fn raising_threshold_never_adds_signal() {
        let s = stream();
        let mut prev: Option<Vec<Decision>> = None;
        for thr in [-2000, -100, 0, 50, 400, 3000] {
            let d = denoise_stream(&s, &cfg(thr)).unwrap();
            if let Some(p) = &prev {
                for (a, b) in p.iter().zip(&d) {
                    assert!(!(a.predicted == Label::Noise && b.predicted == Label::Signal));
                }
            }
            prev = Some(d);
        }
    }

    #[test]
    fn rejects_disorder_and_bounds() {
        let s = [
            Event::new(10, 1, 1, Polarity::On),
            Event::new(5, 1, 1, Polarity::On),
        ];
        assert!(matches!(
            denoise_stream(&s, &cfg(0)),
            Err(Error::Ordering { line: 3, .. })
        ));
        let s = [Event::new(10, 400, 1, Polarity::On)];
        assert!(matches!(
            denoise_stream(&s, &cfg(0)),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn sessions_match_sequential_runs() {
        let s = stream();
        let streams = vec![s[..100].to_vec(), s[100..].to_vec(), s.clone()];
        let par = denoise_sessions(&streams, &cfg(0), Exec::Parallel);
        for (r, st) in par.into_iter().zip(&streams) {
            assert_eq!(r.unwrap(), denoise_stream(st, &cfg(0)).unwrap());
        }
    }

    #[test]
    fn decision_csv_round_trip() {
        let d = denoise_stream(&stream(), &cfg(0)).unwrap();
        let mut buf = Vec::new();
        write_decisions(&mut buf, &d).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_us,x,y,p,pred,logit,label\n"));
        assert_eq!(read_decisions(buf.as_slice()).unwrap(), d);
    }
}
