//! Closed-form cost model of the hardware filter: latency, sustainable event
//! rate, busy-event handling, power/energy and the host-side load.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::denoiser::Decision;
use crate::error::{Error, Result};
use crate::events::Label;

/// Per-event energy split of the ASIC pipeline plus static SRAM leakage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub mlp_nj: f64,
    pub sram_nj: f64,
    pub e2mlp_nj: f64,
    pub leakage_mw: f64,
}

impl EnergyModel {
    pub fn per_event_nj(&self) -> f64 {
        self.mlp_nj + self.sram_nj + self.e2mlp_nj
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlatformProfile {
    pub name: String,
    pub clock_hz: f64,
    pub cycles_e2mlp: u32,
    pub cycles_mlp: u32,
    /// FPGA power is dominated by standby power and is not modeled.
    pub energy: Option<EnergyModel>,
}

pub const PLATFORMS: [&str; 3] = ["fpga_xc7z100", "fpga_zu3cg", "asic_65nm"];

impl PlatformProfile {
    pub fn builtin(name: &str) -> Option<Self> {
        let (clock_hz, cycles_e2mlp, cycles_mlp, energy) = match name {
            "fpga_xc7z100" => (100e6, 7, 3, None),
            "fpga_zu3cg" => (236e6, 7, 3, None),
            "asic_65nm" => (
                833e6,
                30,
                3,
                Some(EnergyModel {
                    mlp_nj: 1.2,
                    sram_nj: 2.4,
                    e2mlp_nj: 0.4,
                    leakage_mw: 35.0,
                }),
            ),
            _ => return None,
        };
        Some(PlatformProfile {
            name: name.to_owned(),
            clock_hz,
            cycles_e2mlp,
            cycles_mlp,
            energy,
        })
    }

    pub fn total_cycles(&self) -> u32 {
        self.cycles_e2mlp + self.cycles_mlp
    }
}

impl FromStr for PlatformProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlatformProfile::builtin(s).ok_or_else(|| {
            Error::Config(format!(
                "unknown platform `{s}` (expected one of {})",
                PLATFORMS.join(", ")
            ))
        })
    }
}

pub fn latency_ns(p: &PlatformProfile) -> f64 {
    f64::from(p.total_cycles()) / p.clock_hz * 1e9
}

/// Highest event rate at which every event is classified.
pub fn max_event_rate(p: &PlatformProfile) -> f64 {
    p.clock_hz / f64::from(p.total_cycles())
}

pub fn energy_per_event_nj(p: &PlatformProfile) -> Option<f64> {
    p.energy.map(|e| e.per_event_nj())
}

/// Leakage plus dynamic power at `event_rate_hz`; `None` for platforms without an energy model.
pub fn power_mw(p: &PlatformProfile, event_rate_hz: f64) -> Option<f64> {
    // nJ/event * events/s = 1e-9 W, i.e. 1e-6 mW
    p.energy
        .map(|e| e.leakage_mw + event_rate_hz * e.per_event_nj() * 1e-6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusyPolicy {
    /// Events arriving while busy pass through unfiltered.
    Bypass,
    /// Events arriving while busy are dropped.
    Block,
}

impl FromStr for BusyPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bypass" => Ok(BusyPolicy::Bypass),
            "block" => Ok(BusyPolicy::Block),
            _ => Err(Error::Config(format!("unknown busy policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occupancy {
    pub policy: BusyPolicy,
    /// True for events that arrived while the pipeline was busy.
    pub busy: Vec<bool>,
    pub processed: usize,
    pub bypassed: usize,
    pub blocked: usize,
}

impl Occupancy {
    pub fn affected(&self) -> usize {
        self.bypassed + self.blocked
    }
}

/// Single server without an input queue, arrival times in ns. An accepted
/// event keeps the pipeline busy for the full latency; events arriving in
/// that window are not classified and do not extend it.
pub fn simulate_occupancy_ns(
    arrivals_ns: &[f64],
    p: &PlatformProfile,
    policy: BusyPolicy,
) -> Occupancy {
    let busy_ns = latency_ns(p);
    let mut free_at = f64::NEG_INFINITY;
    let busy: Vec<bool> = arrivals_ns
        .iter()
        .map(|&t| {
            if t < free_at {
                true
            } else {
                free_at = t + busy_ns;
                false
            }
        })
        .collect();
    let affected = busy.iter().filter(|&&b| b).count();
    let (bypassed, blocked) = match policy {
        BusyPolicy::Bypass => (affected, 0),
        BusyPolicy::Block => (0, affected),
    };
    Occupancy {
        policy,
        processed: busy.len() - affected,
        busy,
        bypassed,
        blocked,
    }
}

/// Same as [`simulate_occupancy_ns`] for µs event timestamps.
pub fn simulate_occupancy(
    timestamps_us: &[u64],
    p: &PlatformProfile,
    policy: BusyPolicy,
) -> Occupancy {
    let ns: Vec<f64> = timestamps_us.iter().map(|&t| t as f64 * 1e3).collect();
    simulate_occupancy_ns(&ns, p, policy)
}

/// Events leaving the camera: classified events predicted signal, plus busy
/// events under the bypass policy.
pub fn output_events(decisions: &[Decision], occ: &Occupancy) -> usize {
    decisions
        .iter()
        .zip(&occ.busy)
        .filter(|(d, &busy)| {
            if busy {
                occ.policy == BusyPolicy::Bypass
            } else {
                d.predicted == Label::Signal
            }
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HostLoad {
    pub bytes_per_event: f64,
    pub buffer_events: f64,
    pub raw_data_rate: f64,
    pub denoised_data_rate: f64,
    pub raw_interrupt_hz: f64,
    pub denoised_interrupt_hz: f64,
    pub data_reduction: f64,
    pub interrupt_reduction: f64,
}

pub fn host_load(
    raw_rate_eps: f64,
    denoised_rate_eps: f64,
    bytes_per_event: f64,
    buffer_events: f64,
) -> Result<HostLoad> {
    if [
        raw_rate_eps,
        denoised_rate_eps,
        bytes_per_event,
        buffer_events,
    ]
    .iter()
    .any(|v| !(v.is_finite() && *v > 0.0))
    {
        return Err(Error::Config(
            "host load parameters must be positive".into(),
        ));
    }
    let raw_interrupt_hz = raw_rate_eps / buffer_events;
    let denoised_interrupt_hz = denoised_rate_eps / buffer_events;
    Ok(HostLoad {
        bytes_per_event,
        buffer_events,
        raw_data_rate: raw_rate_eps * bytes_per_event,
        denoised_data_rate: denoised_rate_eps * bytes_per_event,
        raw_interrupt_hz,
        denoised_interrupt_hz,
        data_reduction: raw_rate_eps / denoised_rate_eps,
        interrupt_reduction: raw_interrupt_hz / denoised_interrupt_hz,
    })
}

/// Low-light scenario: 10 Mev/s raw, 100 kev/s after denoising, 10k-event USB buffer.
pub fn low_light_preset(bytes_per_event: f64) -> HostLoad {
    host_load(1e7, 1e5, bytes_per_event, 1e4).expect("preset parameters are positive")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineStats {
    pub platform: String,
    pub latency_ns: f64,
    pub max_event_rate_hz: f64,
    pub event_rate_hz: f64,
    pub power_mw: Option<f64>,
    pub energy_per_event_nj: Option<f64>,
    pub occupancy: Option<(BusyPolicy, usize, usize, usize)>,
    pub host: Option<HostLoad>,
}

impl PipelineStats {
    pub fn new(p: &PlatformProfile, event_rate_hz: f64) -> Self {
        PipelineStats {
            platform: p.name.clone(),
            latency_ns: latency_ns(p),
            max_event_rate_hz: max_event_rate(p),
            event_rate_hz,
            power_mw: power_mw(p, event_rate_hz),
            energy_per_event_nj: energy_per_event_nj(p),
            occupancy: None,
            host: None,
        }
    }

    pub fn with_occupancy(mut self, occ: &Occupancy) -> Self {
        self.occupancy = Some((occ.policy, occ.processed, occ.bypassed, occ.blocked));
        self
    }

    pub fn with_host(mut self, host: HostLoad) -> Self {
        self.host = Some(host);
        self
    }

    /// Ordered (key, value) pairs; `n/a` where a quantity is not modeled.
    pub fn entries(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.3}"));
        let mut e = vec![
            ("platform".to_owned(), self.platform.clone()),
            ("latency_ns".to_owned(), format!("{:.3}", self.latency_ns)),
            (
                "max_event_rate_hz".to_owned(),
                format!("{:.1}", self.max_event_rate_hz),
            ),
            (
                "event_rate_hz".to_owned(),
                format!("{:.1}", self.event_rate_hz),
            ),
            ("power_mw".to_owned(), opt(self.power_mw)),
            (
                "energy_per_event_nj".to_owned(),
                opt(self.energy_per_event_nj),
            ),
        ];
        if let Some((policy, processed, bypassed, blocked)) = self.occupancy {
            let policy = match policy {
                BusyPolicy::Bypass => "bypass",
                BusyPolicy::Block => "block",
            };
            e.push(("policy".into(), policy.into()));
            e.push(("events_processed".into(), processed.to_string()));
            e.push(("events_bypassed".into(), bypassed.to_string()));
            e.push(("events_blocked".into(), blocked.to_string()));
        }
        if let Some(h) = &self.host {
            e.push(("bytes_per_event".into(), format!("{}", h.bytes_per_event)));
            e.push(("buffer_events".into(), format!("{}", h.buffer_events)));
            e.push((
                "raw_data_rate_bps".into(),
                format!("{:.1}", h.raw_data_rate),
            ));
            e.push((
                "denoised_data_rate_bps".into(),
                format!("{:.1}", h.denoised_data_rate),
            ));
            e.push((
                "raw_interrupt_hz".into(),
                format!("{:.3}", h.raw_interrupt_hz),
            ));
            e.push((
                "denoised_interrupt_hz".into(),
                format!("{:.3}", h.denoised_interrupt_hz),
            ));
            e.push(("data_reduction".into(), format!("{:.3}", h.data_reduction)));
            e.push((
                "interrupt_reduction".into(),
                format!("{:.3}", h.interrupt_reduction),
            ));
        }
        e
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}
