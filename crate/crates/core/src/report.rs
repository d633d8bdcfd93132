//! Simulation report: per-phase counters, utilization, and the energy
//! bookkeeping. Reports serialize to JSON deterministically (fixed field
//! order, no timestamps), so identical runs give byte-identical files.

use serde::Serialize;

use crate::config::{EnergyConstants, EngineConfig};
use crate::error::Result;

/// Energy split mirroring the arithmetic / memory / interconnect breakdown.
#[derive(Debug, Clone, Copy, Default, Serialize, PartialEq)]
pub struct EnergyBreakdown {
    pub compute_pj: f64,
    pub memory_pj: f64,
    pub interconnect_pj: f64,
    pub total_pj: f64,
}

/// Raw event counters of one phase.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PhaseCounters {
    pub macs: u64,
    pub mult_invocations: u64,
    pub reduce_ops: u64,
    pub adds: u64,
    pub stall_cycles: u64,
    pub active_pe_cycles: u64,
    /// PE-cycles offered by the grid over this phase (denominator of
    /// utilization).
    pub pe_cycles_available: u64,
    pub bytes_scratchpad: u64,
    pub bytes_hbm: u64,
    /// Element-hops over inter-tile links.
    pub forward_hops: u64,
}

impl PhaseCounters {
    pub fn merge(&mut self, o: &PhaseCounters) {
        self.macs += o.macs;
        self.mult_invocations += o.mult_invocations;
        self.reduce_ops += o.reduce_ops;
        self.adds += o.adds;
        self.stall_cycles += o.stall_cycles;
        self.active_pe_cycles += o.active_pe_cycles;
        self.pe_cycles_available += o.pe_cycles_available;
        self.bytes_scratchpad += o.bytes_scratchpad;
        self.bytes_hbm += o.bytes_hbm;
        self.forward_hops += o.forward_hops;
    }
}

/// Per-phase report entry.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PhaseStats {
    pub cycles: u64,
    #[serde(flatten)]
    pub counters: PhaseCounters,
    pub utilization: f64,
    pub energy: EnergyBreakdown,
}

impl PhaseStats {
    pub fn finalize(&mut self, constants: &EnergyConstants) {
        self.utilization = if self.counters.pe_cycles_available == 0 {
            0.0
        } else {
            self.counters.active_pe_cycles as f64 / self.counters.pe_cycles_available as f64
        };
        self.energy = energy_estimate(&self.counters, constants);
    }

    pub fn merge(&mut self, o: &PhaseStats) {
        self.cycles += o.cycles;
        self.counters.merge(&o.counters);
    }
}

/// Energy from counters: compute covers multiplies and additions/reductions,
/// memory covers scratchpad bytes plus HBM at bits x pJ/bit, interconnect
/// covers forwarded element-hops. Components sum exactly to the total.
pub fn energy_estimate(c: &PhaseCounters, k: &EnergyConstants) -> EnergyBreakdown {
    let compute = c.mult_invocations as f64 * k.mac_pj
        + (c.adds + c.reduce_ops) as f64 * k.add_pj;
    let memory = c.bytes_scratchpad as f64 * k.scratchpad_pj_per_byte
        + hbm_energy_pj(c.bytes_hbm, k.hbm_pj_per_bit);
    let interconnect = c.forward_hops as f64 * k.hop_pj;
    EnergyBreakdown {
        compute_pj: compute,
        memory_pj: memory,
        interconnect_pj: interconnect,
        total_pj: compute + memory + interconnect,
    }
}

/// HBM energy: bytes x 8 bits x pJ/bit.
pub fn hbm_energy_pj(bytes: u64, pj_per_bit: f64) -> f64 {
    bytes as f64 * 8.0 * pj_per_bit
}

/// One layer's phases.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LayerReport {
    pub index: usize,
    pub model: String,
    pub transformation: PhaseStats,
    pub aggregation: PhaseStats,
    /// Scalar post-processing (softmax, normalization, combine steps).
    pub post: PhaseStats,
    /// Worst relative deviation against the dense-math reference.
    pub max_rel_deviation: f64,
}

impl LayerReport {
    pub fn total_cycles(&self) -> u64 {
        self.transformation.cycles + self.aggregation.cycles + self.post.cycles
    }
}

/// Full simulation report.
#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub config: EngineConfig,
    pub seed: u64,
    pub layers: Vec<LayerReport>,
    pub totals: Totals,
    pub verified: bool,
    /// Provenance note: all constants except the HBM pJ/bit are modeled.
    pub energy_note: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Totals {
    pub transformation: PhaseStats,
    pub aggregation: PhaseStats,
    pub post: PhaseStats,
    pub overall: PhaseStats,
}

impl SimReport {
    pub fn new(config: EngineConfig, seed: u64) -> Self {
        SimReport {
            config,
            seed,
            layers: Vec::new(),
            totals: Totals::default(),
            verified: false,
            energy_note: "energy constants are modeled estimates, except hbm_pj_per_bit \
                          (HBM 2.0 literature figure); do not quote absolute joules"
                .into(),
        }
    }

    /// Recomputes totals and per-phase derived values.
    pub fn finalize(&mut self) {
        let constants = self.config.energy;
        let mut totals = Totals::default();
        for layer in self.layers.iter_mut() {
            layer.transformation.finalize(&constants);
            layer.aggregation.finalize(&constants);
            layer.post.finalize(&constants);
            totals.transformation.merge(&layer.transformation);
            totals.aggregation.merge(&layer.aggregation);
            totals.post.merge(&layer.post);
        }
        totals.overall.merge(&totals.transformation);
        totals.overall.merge(&totals.aggregation);
        totals.overall.merge(&totals.post);
        totals.transformation.finalize(&constants);
        totals.aggregation.finalize(&constants);
        totals.post.finalize(&constants);
        totals.overall.finalize(&constants);
        self.totals = totals;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self).expect("report serializes"))
    }

    /// Flat per-layer/phase rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,model,phase,cycles,macs,mult_invocations,adds,stalls,utilization,\
             bytes_scratchpad,bytes_hbm,energy_total_pj\n",
        );
        for l in &self.layers {
            for (phase, s) in [
                ("transformation", &l.transformation),
                ("aggregation", &l.aggregation),
                ("post", &l.post),
            ] {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{:.6},{},{},{:.3}\n",
                    l.index,
                    l.model,
                    phase,
                    s.cycles,
                    s.counters.macs,
                    s.counters.mult_invocations,
                    s.counters.adds,
                    s.counters.stall_cycles,
                    s.utilization,
                    s.counters.bytes_scratchpad,
                    s.counters.bytes_hbm,
                    s.energy.total_pj,
                ));
            }
        }
        out
    }
}
