//! Background activity filter (BAF): an event passes iff one of its
//! neighbors fired within the correlation window. Polarity-agnostic; the
//! event's own pixel is not part of its neighborhood.

use crate::denoiser::{run_filter, Decision, EventFilter};
use crate::error::{Error, Result};
use crate::events::{Event, Label, SensorGeometry};

/// Score of an event with no neighbor history.
pub const NO_SUPPORT: i64 = -i64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BafConfig {
    pub geometry: SensorGeometry,
    pub tau_us: u64,
    pub radius: u16,
}

impl BafConfig {
    pub fn new(geometry: SensorGeometry, tau_us: u64, radius: u16) -> Result<Self> {
        if tau_us == 0 || radius == 0 {
            return Err(Error::Config(
                "BAF needs a positive window and radius".into(),
            ));
        }
        Ok(BafConfig {
            geometry,
            tau_us,
            radius,
        })
    }
}

impl Default for BafConfig {
    fn default() -> Self {
        BafConfig {
            geometry: SensorGeometry::default(),
            tau_us: 1000,
            radius: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Baf {
    cfg: BafConfig,
    last: Vec<Option<u64>>,
}

impl Baf {
    pub fn new(cfg: BafConfig) -> Self {
        Baf {
            last: vec![None; cfg.geometry.pixels()],
            cfg,
        }
    }

    /// Smallest delay to any neighbor's last event, if any neighbor fired.
    fn nearest_delay(&self, e: &Event) -> Option<u64> {
        let g = self.cfg.geometry;
        let r = i64::from(self.cfg.radius);
        let (cx, cy) = (i64::from(e.x), i64::from(e.y));
        let mut best: Option<u64> = None;
        for y in (cy - r).max(0)..=(cy + r).min(i64::from(g.height()) - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(i64::from(g.width()) - 1) {
                if x == cx && y == cy {
                    continue;
                }
                if let Some(t) = self.last[g.index(x as u16, y as u16)] {
                    let d = e.t_us.saturating_sub(t);
                    best = Some(best.map_or(d, |b| b.min(d)));
                }
            }
        }
        best
    }
}

impl EventFilter for Baf {
    fn process(&mut self, e: &Event) -> Result<Decision> {
        let g = self.cfg.geometry;
        g.check(u32::from(e.x), u32::from(e.y))?;
        let delay = self.nearest_delay(e);
        self.last[g.index(e.x, e.y)] = Some(e.t_us);
        let signal = delay.is_some_and(|d| d <= self.cfg.tau_us);
        Ok(Decision {
            event: *e,
            predicted: Label::from_signal(signal),
            score: Some(delay.map_or(NO_SUPPORT, |d| -(d.min(i64::MAX as u64) as i64))),
        })
    }
}

pub fn baf_denoise(events: &[Event], cfg: &BafConfig) -> Result<Vec<Decision>> {
    run_filter(&mut Baf::new(*cfg), events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Polarity;

    #[test]
    fn lone_event_is_noise() {
        let d = baf_denoise(
            &[Event::new(5, 10, 10, Polarity::On)],
            &BafConfig::default(),
        )
        .unwrap();
        assert_eq!(d[0].predicted, Label::Noise);
        assert_eq!(d[0].score, Some(NO_SUPPORT));
    }

    #[test]
    fn adjacent_pair_within_window() {
        let ev = [
            Event::new(100, 10, 10, Polarity::On),
            Event::new(101, 11, 10, Polarity::Off),
        ];
        let d = baf_denoise(&ev, &BafConfig::default()).unwrap();
        assert_eq!(d[1].predicted, Label::Signal);
        assert_eq!(d[1].score, Some(-1));
    }

    #[test]
    fn own_pixel_gives_no_support() {
        let ev = [
            Event::new(100, 10, 10, Polarity::On),
            Event::new(101, 10, 10, Polarity::On),
        ];
        let d = baf_denoise(&ev, &BafConfig::default()).unwrap();
        assert_eq!(d[1].predicted, Label::Noise);
    }

    #[test]
    fn radius_widens_neighborhood() {
        let ev = [
            Event::new(100, 10, 10, Polarity::On),
            Event::new(200, 12, 10, Polarity::On),
        ];
        let g = SensorGeometry::DAVIS346;
        assert_eq!(
            baf_denoise(&ev, &BafConfig::new(g, 1000, 1).unwrap()).unwrap()[1].predicted,
            Label::Noise
        );
        assert_eq!(
            baf_denoise(&ev, &BafConfig::new(g, 1000, 2).unwrap()).unwrap()[1].predicted,
            Label::Signal
        );
        assert!(BafConfig::new(g, 0, 1).is_err());
    }

    #[test]
    fn larger_window_never_drops_signal() {
        let mut ev = Vec::new();
        let mut t = 0;
        for i in 0..3000u64 {
            t += (i * 7919) % 400;
            ev.push(Event::new(
                t,
                ((i * 31) % 20) as u16 + 5,
                ((i * 17) % 20) as u16 + 5,
                Polarity::On,
            ));
        }
        let g = SensorGeometry::DAVIS346;
        let mut prev: Option<Vec<Decision>> = None;
        for tau in [10, 100, 500, 2000, 10_000] {
            let d = baf_denoise(&ev, &BafConfig::new(g, tau, 1).unwrap()).unwrap();
            if let Some(p) = &prev {
                for (a, b) in p.iter().zip(&d) {
                    assert!(!(a.predicted == Label::Signal && b.predicted == Label::Noise));
                }
            }
            prev = Some(d);
        }
    }

    #[test]
    fn poisson_noise_pass_rate() {
        use crate::exec::Exec;
        use crate::synth::{generate_noise, NoiseConfig};
        let g = SensorGeometry::new(100, 100).unwrap();
        let (rate, tau_s) = (50.0, 1e-3);
        let noise = NoiseConfig {
            rate_hz: rate,
            duration_s: 1.0,
            seed: 4,
        };
        let events = generate_noise(g, &noise, Exec::Parallel).unwrap();
        let cfg = BafConfig::new(g, 1000, 1).unwrap();
        let passed = baf_denoise(&events, &cfg)
            .unwrap()
            .iter()
            .filter(|d| d.predicted == Label::Signal)
            .count();
        let observed = passed as f64 / events.len() as f64;
        // a pixel with n neighbours passes with probability 1 - exp(-n * rate * tau)
        let mut expected = 0.0;
        for y in 0..100i64 {
            for x in 0..100i64 {
                let n = (-1..=1)
                    .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
                    .filter(|&(dx, dy)| (dx, dy) != (0, 0) && g.contains(x + dx, y + dy))
                    .count() as f64;
                expected += 1.0 - (-n * rate * tau_s).exp();
            }
        }
        expected /= 10_000.0;
        assert!(
            (observed - expected).abs() / expected < 0.03,
            "observed {observed}, expected {expected}"
        );
    }
}
