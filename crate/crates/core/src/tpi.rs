//! Timestamp-polarity image (TPI) and the feature extractor that turns an
//! event plus its 7x7 TPI neighborhood into the 98-element network input.

use crate::error::{Error, Result};
use crate::events::{ms_timestamp, wrap16, Event, SensorGeometry};
use crate::qarith::QFormat;

pub const PATCH_SIZE: usize = 7;
pub const PATCH_RADIUS: i64 = (PATCH_SIZE / 2) as i64;
pub const PATCH_CELLS: usize = PATCH_SIZE * PATCH_SIZE;
pub const INPUT_LEN: usize = 2 * PATCH_CELLS;
pub const CENTER: usize = PATCH_CELLS / 2;
/// Number of levels of the age code (4-bit fraction).
const AGE_LEVELS: i64 = 16;

/// Age window, a power of two between 1 and 256 ms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AgeWindow {
    log2_ms: u8,
}

impl AgeWindow {
    pub const MAX_MS: u32 = 256;

    pub fn from_ms(tau_ms: u32) -> Result<Self> {
        if !tau_ms.is_power_of_two() || tau_ms > Self::MAX_MS {
            return Err(Error::AgeWindow(tau_ms));
        }
        Ok(AgeWindow {
            log2_ms: tau_ms.trailing_zeros() as u8,
        })
    }

    pub fn ms(self) -> u32 {
        1 << self.log2_ms
    }

    /// Right shift applied to the ms delta; negative means a left shift.
    pub fn shift(self) -> i32 {
        i32::from(self.log2_ms) - 4
    }

    pub fn all() -> impl Iterator<Item = AgeWindow> {
        (0..=8u8).map(|log2_ms| AgeWindow { log2_ms })
    }
}

impl Default for AgeWindow {
    fn default() -> Self {
        AgeWindow { log2_ms: 6 }
    }
}

/// 4-bit age code in 0..=15 (value = code / 16); 0 once `delta_ms >= tau`.
pub fn quantized_age(delta_ms: u32, tau: AgeWindow) -> u8 {
    let s = tau.shift();
    let scaled = if s >= 0 {
        i64::from(delta_ms >> s)
    } else {
        i64::from(delta_ms) << (-s)
    };
    (AGE_LEVELS - scaled).clamp(0, AGE_LEVELS - 1) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PixelRecord {
    pub t_ms: u16,
    /// -1, +1, or 0 for a pixel that never fired.
    pub polarity: i8,
    pub valid: bool,
}

/// The network input for one event: 49 age codes and 49 signed polarities, both
/// in row-major patch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InputVector {
    pub ages: [u8; PATCH_CELLS],
    pub polarities: [i8; PATCH_CELLS],
}

impl InputVector {
    /// Feature vector of an event with no recent neighbors.
    pub fn lone(polarity_sign: i8) -> Self {
        let mut polarities = [0; PATCH_CELLS];
        polarities[CENTER] = polarity_sign;
        InputVector {
            ages: [0; PATCH_CELLS],
            polarities,
        }
    }

    /// Pre-quantizer real values: ages as code/16 followed by polarities in {-1, 0, 1}.
    pub fn real(&self) -> [f64; INPUT_LEN] {
        let mut out = [0.0; INPUT_LEN];
        for i in 0..PATCH_CELLS {
            out[i] = f64::from(self.ages[i]) / AGE_LEVELS as f64;
            out[PATCH_CELLS + i] = f64::from(self.polarities[i]);
        }
        out
    }

    /// Input codes after the network's input quantizer.
    /// Integer-only; equal to quantizing [`InputVector::real`].
    pub fn quantized(&self, fmt: QFormat) -> [i64; INPUT_LEN] {
        let age_frac = AGE_LEVELS.trailing_zeros();
        let mut out = [0; INPUT_LEN];
        for i in 0..PATCH_CELLS {
            out[i] = fmt.requantize(i64::from(self.ages[i]), age_frac);
            out[PATCH_CELLS + i] = fmt.requantize(i64::from(self.polarities[i]), 0);
        }
        out
    }
}

/// Per-pixel store of the latest wrapped ms timestamp and polarity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TpiMemory {
    geometry: SensorGeometry,
    cells: Vec<PixelRecord>,
}

impl TpiMemory {
    pub fn new(geometry: SensorGeometry) -> Self {
        TpiMemory {
            geometry,
            cells: vec![PixelRecord::default(); geometry.pixels()],
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn get(&self, x: u16, y: u16) -> Option<PixelRecord> {
        if !self.geometry.contains(i64::from(x), i64::from(y)) {
            return None;
        }
        Some(self.cells[self.geometry.index(x, y)])
    }

    pub fn update(&mut self, e: &Event) -> Result<()> {
        self.geometry.check(u32::from(e.x), u32::from(e.y))?;
        let idx = self.geometry.index(e.x, e.y);
        self.cells[idx] = PixelRecord {
            t_ms: wrap16(ms_timestamp(e.t_us)),
            polarity: e.polarity.sign(),
            valid: true,
        };
        Ok(())
    }

    /// Reads the 7x7 neighborhood of `e`. Must run before `update(e)`.
    /// Cells outside the array read as "no event".
    pub fn extract_features(&self, e: &Event, tau: AgeWindow) -> InputVector {
        let now = wrap16(ms_timestamp(e.t_us));
        let mut v = InputVector {
            ages: [0; PATCH_CELLS],
            polarities: [0; PATCH_CELLS],
        };
        let (cx, cy) = (i64::from(e.x), i64::from(e.y));
        let mut k = 0;
        for dy in -PATCH_RADIUS..=PATCH_RADIUS {
            for dx in -PATCH_RADIUS..=PATCH_RADIUS {
                let (x, y) = (cx + dx, cy + dy);
                if self.geometry.contains(x, y) {
                    let rec = self.cells[self.geometry.index(x as u16, y as u16)];
                    if rec.valid {
                        // modulo-2^16 delta; anything past the largest window ages out
                        let delta = u32::from(now.wrapping_sub(rec.t_ms));
                        let age = if delta >= AgeWindow::MAX_MS {
                            0
                        } else {
                            quantized_age(delta, tau)
                        };
                        v.ages[k] = age;
                        if age > 0 {
                            v.polarities[k] = rec.polarity;
                        }
                    }
                }
                k += 1;
            }
        }
        v.polarities[CENTER] = e.polarity.sign();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Polarity;

    fn tau(ms: u32) -> AgeWindow {
        AgeWindow::from_ms(ms).unwrap()
    }

    #[test]
    fn age_examples() {
        assert_eq!(quantized_age(0, tau(64)), 15);
        assert_eq!(quantized_age(64, tau(64)), 0);
        assert_eq!(quantized_age(33, tau(64)), 8);
        assert_eq!(quantized_age(1, tau(1)), 0);
        assert_eq!(quantized_age(0, tau(1)), 15);
        assert_eq!(quantized_age(255, tau(256)), 1);
    }

    #[test]
    fn window_validation() {
        assert!(AgeWindow::from_ms(0).is_err());
        assert!(AgeWindow::from_ms(48).is_err());
        assert!(AgeWindow::from_ms(512).is_err());
        assert_eq!(
            AgeWindow::all().map(|t| t.ms()).collect::<Vec<_>>(),
            vec![1, 2, 4, 8, 16, 32, 64, 128, 256]
        );
        assert_eq!(AgeWindow::default().ms(), 64);
    }

    #[test]
    fn age_tracks_linear_decay_for_every_window() {
        for t in AgeWindow::all() {
            let tau_ms = t.ms();
            let mut prev = u8::MAX;
            for delta in 0..=2 * tau_ms {
                let code = quantized_age(delta, t);
                assert!(code <= prev, "age must not increase with delta");
                prev = code;
                let ideal = (1.0 - f64::from(delta) / f64::from(tau_ms)).max(0.0);
                let err = (f64::from(code) / 16.0 - ideal).abs();
                assert!(
                    err <= 2.0 / 16.0 + 1e-12,
                    "tau={tau_ms} delta={delta} err={err}"
                );
                if delta >= tau_ms {
                    assert_eq!(code, 0);
                }
            }
        }
    }

    #[test]
    fn fresh_memory_gives_lone_vector() {
        let tpi = TpiMemory::new(SensorGeometry::DAVIS346);
        let e = Event::new(5_000, 100, 100, Polarity::Off);
        assert_eq!(tpi.extract_features(&e, tau(64)), InputVector::lone(-1));
    }

    #[test]
    fn single_left_neighbor() {
        let mut tpi = TpiMemory::new(SensorGeometry::DAVIS346);
        let prior = Event::new(100 * 1024, 49, 50, Polarity::Off);
        tpi.update(&prior).unwrap();
        let e = Event::new(110 * 1024, 50, 50, Polarity::On);
        let v = tpi.extract_features(&e, tau(64));
        let left = CENTER - 1;
        for i in 0..PATCH_CELLS {
            if i == left {
                assert_eq!(v.ages[i], 14);
                assert_eq!(v.polarities[i], -1);
            } else if i == CENTER {
                assert_eq!(v.ages[i], 0);
                assert_eq!(v.polarities[i], 1);
            } else {
                assert_eq!((v.ages[i], v.polarities[i]), (0, 0));
            }
        }
    }

    #[test]
    fn stale_polarity_is_zeroed() {
        let mut tpi = TpiMemory::new(SensorGeometry::DAVIS346);
        tpi.update(&Event::new(0, 10, 10, Polarity::On)).unwrap();
        let e = Event::new(70 * 1024, 11, 10, Polarity::On);
        let v = tpi.extract_features(&e, tau(64));
        assert_eq!(v.ages[CENTER - 1], 0);
        assert_eq!(v.polarities[CENTER - 1], 0);
    }

    #[test]
    fn corner_patch_outside_cells() {
        let g = SensorGeometry::DAVIS346;
        let mut tpi = TpiMemory::new(g);
        // fill every pixel in a 4x4 corner block with a fresh event
        for y in 0..4 {
            for x in 0..4 {
                tpi.update(&Event::new(0, x, y, Polarity::On)).unwrap();
            }
        }
        let e = Event::new(10, 0, 0, Polarity::On);
        let v = tpi.extract_features(&e, tau(64));
        let mut outside = 0;
        let mut k = 0;
        for dy in -3i64..=3 {
            for dx in -3i64..=3 {
                if !g.contains(dx, dy) {
                    outside += 1;
                    assert_eq!((v.ages[k], v.polarities[k]), (0, 0));
                } else {
                    assert_eq!(v.ages[k], 15);
                }
                k += 1;
            }
        }
        assert_eq!(outside, 49 - 16);
    }

    #[test]
    fn update_semantics() {
        let mut tpi = TpiMemory::new(SensorGeometry::DAVIS346);
        tpi.update(&Event::new(5 * 1024, 3, 4, Polarity::On))
            .unwrap();
        assert_eq!(
            tpi.get(3, 4),
            Some(PixelRecord {
                t_ms: 5,
                polarity: 1,
                valid: true
            })
        );
        tpi.update(&Event::new(9 * 1024, 3, 4, Polarity::Off))
            .unwrap();
        assert_eq!(
            tpi.get(3, 4),
            Some(PixelRecord {
                t_ms: 9,
                polarity: -1,
                valid: true
            })
        );
        tpi.update(&Event::new(67_108_864, 3, 4, Polarity::On))
            .unwrap();
        assert_eq!(tpi.get(3, 4).unwrap().t_ms, 0);
        assert!(tpi.update(&Event::new(0, 346, 0, Polarity::On)).is_err());
    }

    #[test]
    fn wrapped_delta_ages_correctly() {
        let mut tpi = TpiMemory::new(SensorGeometry::DAVIS346);
        // stored at ms 65530, classified at ms 65540 (wraps to 4): delta 10
        tpi.update(&Event::new(65_530 * 1024, 20, 20, Polarity::On))
            .unwrap();
        let v = tpi.extract_features(&Event::new(65_540 * 1024, 21, 20, Polarity::On), tau(64));
        assert_eq!(v.ages[CENTER - 1], 14);
        // a full wrap later the same stored value must not look fresh
        let v = tpi.extract_features(
            &Event::new((65_530 + 65_536 + 300) * 1024, 21, 20, Polarity::On),
            tau(64),
        );
        assert_eq!(v.ages[CENTER - 1], 0);
    }

    #[test]
    fn distant_events_do_not_change_features() {
        let mut a = TpiMemory::new(SensorGeometry::DAVIS346);
        a.update(&Event::new(1000, 50, 50, Polarity::On)).unwrap();
        let mut b = a.clone();
        b.update(&Event::new(2000, 55, 50, Polarity::Off)).unwrap();
        b.update(&Event::new(2000, 50, 47, Polarity::Off)).unwrap();
        let e = Event::new(3000, 51, 51, Polarity::On);
        assert_eq!(
            a.extract_features(&e, tau(64)),
            b.extract_features(&e, tau(64))
        );
    }

    #[test]
    fn input_real_and_codes() {
        let mut v = InputVector::lone(1);
        v.ages[0] = 15;
        v.polarities[0] = -1;
        let real = v.real();
        assert_eq!(real[0], 0.9375);
        assert_eq!(real[PATCH_CELLS], -1.0);
        assert_eq!(real[PATCH_CELLS + CENTER], 1.0);
        let codes = v.quantized(crate::qarith::S4);
        assert_eq!(codes[0], 15);
        assert_eq!(codes[PATCH_CELLS], -16);
        assert_eq!(codes[PATCH_CELLS + CENTER], 15);
    }

    #[test]
    fn integer_input_quantizer_matches_float_path() {
        for bits in 2..=8 {
            let fmt = QFormat::signed_fraction(bits);
            for age in 0..16u8 {
                for pol in -1..=1i8 {
                    let mut v = InputVector::lone(pol);
                    v.ages[0] = age;
                    let q = v.quantized(fmt);
                    let r = v.real();
                    for k in 0..INPUT_LEN {
                        assert_eq!(q[k], fmt.quantize(r[k]).code);
                    }
                }
            }
        }
    }
}
