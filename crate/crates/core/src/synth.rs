//! Labeled synthetic datasets: idealized moving edges for signal plus
//! per-pixel Poisson shot noise.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::events::{Event, Label, Polarity, SensorGeometry};
use crate::exec::Exec;

/// Spacing between the events one pixel emits for a single crossing.
const BURST_SPACING_US: u64 = 200;
/// Upper bound (exclusive) of the per-event timing jitter.
const JITTER_US: u64 = 100;

/// One straight edge sweeping across the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub geometry: SensorGeometry,
    /// Direction of motion, degrees; 0 moves towards +x (a vertical edge).
    pub orientation_deg: f64,
    pub speed_px_s: f64,
    pub polarity: Polarity,
    /// Events are kept only below this time.
    pub duration_s: f64,
    pub events_per_crossing: u32,
    /// Time at which the edge starts moving.
    pub start_s: f64,
    /// Distance between the edge and the array at `start_s`.
    pub offset_px: f64,
}

impl SceneConfig {
    pub fn vertical(geometry: SensorGeometry, speed_px_s: f64, duration_s: f64) -> Self {
        SceneConfig {
            geometry,
            orientation_deg: 0.0,
            speed_px_s,
            polarity: Polarity::On,
            duration_s,
            events_per_crossing: 1,
            start_s: 0.0,
            offset_px: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.speed_px_s.is_nan()
            || self.speed_px_s <= 0.0
            || self.duration_s.is_nan()
            || self.duration_s <= 0.0
            || self.events_per_crossing == 0
        {
            return Err(Error::Config(
                "scene needs positive speed, duration and events per crossing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub rate_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sort_events(events: &mut [Event]) {
    events.sort_by_key(|e| (e.t_us, e.y, e.x));
}

/// Signal events of one edge, time-sorted and labeled signal.
pub fn generate_signal(scene: &SceneConfig) -> Result<Vec<Event>> {
    scene.validate()?;
    let g = scene.geometry;
    let (w, h) = (f64::from(g.width()), f64::from(g.height()));
    let theta = scene.orientation_deg.to_radians();
    let (nx, ny) = (theta.cos(), theta.sin());
    let entry = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
        .iter()
        .map(|(x, y)| nx * x + ny * y)
        .fold(f64::INFINITY, f64::min);
    let end_us = (scene.duration_s * 1e6) as u64;
    let salt = splitmix(scene.orientation_deg.to_bits() ^ scene.start_s.to_bits().rotate_left(17));

    let mut out = Vec::new();
    for y in 0..g.height() {
        for x in 0..g.width() {
            let proj = nx * (f64::from(x) + 0.5) + ny * (f64::from(y) + 0.5);
            let t_cross = scene.start_s + (proj - entry + scene.offset_px) / scene.speed_px_s;
            if t_cross < 0.0 || t_cross * 1e6 >= end_us as f64 {
                continue;
            }
            let base = (t_cross * 1e6) as u64;
            for j in 0..u64::from(scene.events_per_crossing) {
                let key = salt ^ (u64::from(x) << 40) ^ (u64::from(y) << 20) ^ j;
                let t_us = base + j * BURST_SPACING_US + splitmix(key) % JITTER_US;
                if t_us < end_us {
                    out.push(Event::new(t_us, x, y, scene.polarity).labeled(Label::Signal));
                }
            }
        }
    }
    sort_events(&mut out);
    Ok(out)
}

/// Poisson shot noise for every pixel; independent ChaCha stream per pixel.
pub fn generate_noise(
    geometry: SensorGeometry,
    noise: &NoiseConfig,
    exec: Exec,
) -> Result<Vec<Event>> {
    if noise.rate_hz.is_nan()
        || noise.rate_hz < 0.0
        || noise.duration_s.is_nan()
        || noise.duration_s <= 0.0
    {
        return Err(Error::Config(
            "noise rate must be >= 0 and duration > 0".into(),
        ));
    }
    if noise.rate_hz == 0.0 {
        return Ok(Vec::new());
    }
    let exp = Exp::new(noise.rate_hz).map_err(|e| Error::Config(e.to_string()))?;
    let rows = exec.map_range(0..usize::from(geometry.height()), |y| {
        let mut row = Vec::new();
        for x in 0..geometry.width() {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(geometry.index(x, y as u16) as u64);
            let mut t = 0.0;
            loop {
                t += exp.sample(&mut rng);
                if t >= noise.duration_s {
                    break;
                }
                let polarity = Polarity::from_bit(rng.random());
                row.push(Event::new((t * 1e6) as u64, x, y as u16, polarity).labeled(Label::Noise));
            }
        }
        row
    });
    let mut all: Vec<Event> = rows.into_iter().flatten().collect();
    sort_events(&mut all);
    Ok(all)
}

/// Merge shot noise into a time-sorted signal stream. Signal events are kept
/// untouched and precede noise at equal timestamps.
pub fn inject_noise(
    signal: &[Event],
    geometry: SensorGeometry,
    noise: &NoiseConfig,
    exec: Exec,
) -> Result<Vec<Event>> {
    let noise = generate_noise(geometry, noise, exec)?;
    Ok(merge(signal, &noise))
}

fn merge(a: &[Event], b: &[Event]) -> Vec<Event> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i].t_us <= b[j].t_us {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Stand-ins for a dense (moving camera) and a sparse (static surveillance) recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Dense,
    Sparse,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Preset::Dense),
            "sparse" => Ok(Preset::Sparse),
            _ => Err(Error::Config(format!(
                "unknown preset `{s}` (expected dense or sparse)"
            ))),
        }
    }
}

impl Preset {
    pub fn scenes(self, geometry: SensorGeometry, duration_s: f64) -> Vec<SceneConfig> {
        let base = SceneConfig::vertical(geometry, 1.0, duration_s);
        match self {
            Preset::Sparse => vec![SceneConfig {
                orientation_deg: 30.0,
                speed_px_s: 60.0,
                ..base
            }],
            Preset::Dense => {
                // several edges of both polarities crossing at different angles and speeds
                const EDGES: [(f64, f64, bool, f64); 8] = [
                    (0.0, 420.0, true, 0.00),
                    (135.0, 300.0, false, 0.05),
                    (60.0, 520.0, true, 0.20),
                    (250.0, 380.0, false, 0.35),
                    (300.0, 460.0, true, 0.50),
                    (190.0, 340.0, true, 0.65),
                    (20.0, 280.0, false, 0.75),
                    (100.0, 400.0, false, 0.90),
                ];
                EDGES
                    .iter()
                    .map(|&(deg, speed, on, start)| SceneConfig {
                        orientation_deg: deg,
                        speed_px_s: speed,
                        polarity: Polarity::from_bit(on),
                        start_s: start * duration_s / 2.0,
                        ..base
                    })
                    .collect()
            }
        }
    }

    pub fn signal(self, geometry: SensorGeometry, duration_s: f64) -> Result<Vec<Event>> {
        let mut all = Vec::new();
        for s in self.scenes(geometry, duration_s) {
            all.extend(generate_signal(&s)?);
        }
        sort_events(&mut all);
        Ok(all)
    }
}

/// Signal of a preset with shot noise injected.
pub fn labeled_dataset(
    preset: Preset,
    geometry: SensorGeometry,
    noise: &NoiseConfig,
    exec: Exec,
) -> Result<Vec<Event>> {
    let signal = preset.signal(geometry, noise.duration_s)?;
    inject_noise(&signal, geometry, noise, exec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(w: u16, h: u16) -> SensorGeometry {
        SensorGeometry::new(w, h).unwrap()
    }

    #[test]
    fn edge_that_never_arrives() {
        let s = SceneConfig {
            offset_px: 500.0,
            ..SceneConfig::vertical(g(32, 32), 100.0, 1.0)
        };
        assert!(generate_signal(&s).unwrap().is_empty());
    }

    #[test]
    fn vertical_edge_counts() {
        let s = SceneConfig::vertical(g(10, 12), 100.0, 1.0);
        let ev = generate_signal(&s).unwrap();
        assert_eq!(ev.len(), 10 * 12);
        // columns are crossed in order
        let mut last_col = 0;
        for e in &ev {
            assert!(e.x >= last_col);
            last_col = e.x;
            assert_eq!(e.label, Some(Label::Signal));
        }
        let double = SceneConfig {
            events_per_crossing: 2,
            ..s
        };
        assert_eq!(generate_signal(&double).unwrap().len(), 2 * ev.len());
        assert!(generate_signal(&SceneConfig {
            speed_px_s: 0.0,
            ..s
        })
        .is_err());
    }

    #[test]
    fn presets_are_deterministic_and_sorted() {
        let a = Preset::Dense.signal(SensorGeometry::DAVIS346, 0.5).unwrap();
        let b = Preset::Dense.signal(SensorGeometry::DAVIS346, 0.5).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.windows(2).all(|w| w[0].t_us <= w[1].t_us));
        assert!(!Preset::Sparse
            .signal(SensorGeometry::DAVIS346, 2.0)
            .unwrap()
            .is_empty());
        assert!("medium".parse::<Preset>().is_err());
    }

    #[test]
    fn zero_rate_is_identity() {
        let s = Preset::Sparse.signal(g(64, 48), 1.0).unwrap();
        let cfg = NoiseConfig {
            rate_hz: 0.0,
            duration_s: 1.0,
            seed: 1,
        };
        assert_eq!(
            inject_noise(&s, g(64, 48), &cfg, Exec::Parallel).unwrap(),
            s
        );
    }

    #[test]
    fn noise_is_seed_stable_across_exec_modes() {
        let cfg = NoiseConfig {
            rate_hz: 20.0,
            duration_s: 0.5,
            seed: 99,
        };
        let a = generate_noise(g(40, 30), &cfg, Exec::Sequential).unwrap();
        let b = generate_noise(g(40, 30), &cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let c =
            generate_noise(g(40, 30), &NoiseConfig { seed: 100, ..cfg }, Exec::Parallel).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn merge_preserves_signal() {
        let geom = g(64, 48);
        let s = Preset::Dense.signal(geom, 0.3).unwrap();
        let cfg = NoiseConfig {
            rate_hz: 10.0,
            duration_s: 0.3,
            seed: 5,
        };
        let merged = inject_noise(&s, geom, &cfg, Exec::Parallel).unwrap();
        let kept: Vec<Event> = merged
            .iter()
            .filter(|e| e.label == Some(Label::Signal))
            .copied()
            .collect();
        assert_eq!(kept, s);
        assert!(merged.windows(2).all(|w| w[0].t_us <= w[1].t_us));
    }

    #[test]
    fn noise_count_and_first_gap_distribution() {
        let geom = g(64, 64);
        let rate = 20.0;
        let cfg = NoiseConfig {
            rate_hz: rate,
            duration_s: 1.0,
            seed: 12,
        };
        let ev = generate_noise(geom, &cfg, Exec::Parallel).unwrap();
        let mean = rate * 4096.0;
        assert!(
            (ev.len() as f64 - mean).abs() < 3.0 * mean.sqrt(),
            "{} events",
            ev.len()
        );
        assert!(ev.iter().all(|e| e.label == Some(Label::Noise)));
        let on = ev.iter().filter(|e| e.polarity == Polarity::On).count() as f64;
        assert!((on / ev.len() as f64 - 0.5).abs() < 0.02);

        // time to the first event of every pixel is exponential
        let mut first = vec![None; geom.pixels()];
        for e in &ev {
            first[geom.index(e.x, e.y)].get_or_insert(e.t_us as f64 * 1e-6);
        }
        let mut t: Vec<f64> = first.into_iter().flatten().collect();
        t.sort_by(f64::total_cmp);
        let n = t.len() as f64;
        let d = t
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-rate * x).exp();
                ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
            })
            .fold(0.0, f64::max);
        assert!(d * n.sqrt() < 1.628, "KS statistic {}", d * n.sqrt());
    }
}
