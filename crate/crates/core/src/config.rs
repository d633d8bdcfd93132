//! Engine configuration and the energy-constant table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Per-event energy constants in picojoules.
///
/// Only the HBM figure is a literature value (3.9 pJ/bit for HBM 2.0); the
/// others are modeled estimates and the report labels them as such.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EnergyConstants {
    pub mac_pj: f64,
    pub add_pj: f64,
    pub scratchpad_pj_per_byte: f64,
    pub hop_pj: f64,
    pub hbm_pj_per_bit: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        EnergyConstants {
            mac_pj: 0.9,
            add_pj: 0.2,
            scratchpad_pj_per_byte: 1.1,
            hop_pj: 0.06,
            hbm_pj_per_bit: 3.9,
        }
    }
}

impl EnergyConstants {
    pub const KEYS: [&'static str; 5] = [
        "mac_pj",
        "add_pj",
        "scratchpad_pj_per_byte",
        "hop_pj",
        "hbm_pj_per_bit",
    ];

    /// Builds the table from an explicit map; every constant must be
    /// present and finite.
    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |key: &'static str| -> Result<f64> {
            let v = *map
                .get(key)
                .ok_or_else(|| SimError::MissingEnergyConstant(key.into()))?;
            if !v.is_finite() || v < 0.0 {
                return Err(SimError::BadConfig(format!(
                    "energy constant `{key}` must be finite and non-negative, got {v}"
                )));
            }
            Ok(v)
        };
        Ok(EnergyConstants {
            mac_pj: get("mac_pj")?,
            add_pj: get("add_pj")?,
            scratchpad_pj_per_byte: get("scratchpad_pj_per_byte")?,
            hop_pj: get("hop_pj")?,
            hbm_pj_per_bit: get("hbm_pj_per_bit")?,
        })
    }
}

/// Simulated hardware configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EngineConfig {
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub tiles_per_cluster: usize,
    pub clusters: usize,
    pub fifo_cam_depth: usize,
    pub scratchpad_kib: usize,
    pub scratchpad_banks: usize,
    pub strassen: bool,
    pub packing: bool,
    pub alpha: f64,
    /// Flips the packing cutoff to read sparsity as the zero fraction.
    pub sparsity_counts_zeros: bool,
    /// Tiles fused per packed group (2..=4).
    pub pack_group: usize,
    /// Cycles the scalar post-processing unit spends per attention entry.
    pub softmax_cycles_per_entry: u64,
    /// Relative tolerance of the built-in reference check.
    pub verify_tolerance: f64,
    /// When false, the reference check is skipped (sweep mode).
    pub verify: bool,
    pub energy: EnergyConstants,
    /// Optional explicit energy table; when present it must be complete.
    pub energy_table: Option<BTreeMap<String, f64>>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            tile_rows: 32,
            tile_cols: 32,
            tiles_per_cluster: 4,
            clusters: 2,
            fifo_cam_depth: 4,
            scratchpad_kib: 512,
            scratchpad_banks: 4,
            strassen: true,
            packing: true,
            alpha: 0.5,
            sparsity_counts_zeros: false,
            pack_group: 2,
            softmax_cycles_per_entry: 1,
            verify_tolerance: 1e-4,
            verify: true,
            energy: EnergyConstants::default(),
            energy_table: None,
        }
    }
}

impl EngineConfig {
    /// Validates counts and the Strassen ring requirement; resolves an
    /// explicit energy table when one is given.
    pub fn validated(mut self) -> Result<Self> {
        for (name, v) in [
            ("tile_rows", self.tile_rows),
            ("tile_cols", self.tile_cols),
            ("tiles_per_cluster", self.tiles_per_cluster),
            ("clusters", self.clusters),
            ("fifo_cam_depth", self.fifo_cam_depth),
            ("scratchpad_kib", self.scratchpad_kib),
            ("scratchpad_banks", self.scratchpad_banks),
        ] {
            if v == 0 {
                return Err(SimError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.strassen && self.tiles_per_cluster != 4 {
            return Err(SimError::BadConfig(format!(
                "the Strassen schedule needs a 4-tile ring, got tiles_per_cluster = {}",
                self.tiles_per_cluster
            )));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(SimError::BadConfig(format!(
                "alpha must sit in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(2..=4).contains(&self.pack_group) {
            return Err(SimError::BadConfig(format!(
                "pack_group must be 2..=4, got {}",
                self.pack_group
            )));
        }
        if let Some(table) = &self.energy_table {
            self.energy = EnergyConstants::from_map(table)?;
        }
        Ok(self)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: EngineConfig = serde_json::from_str(json)
            .map_err(|e| SimError::BadConfig(format!("config JSON: {e}")))?;
        cfg.validated()
    }
}
