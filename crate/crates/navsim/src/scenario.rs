//! Scenario files: the TOML/CSV formats tying topology, content, workload,
//! costs, and policy together, with full-file validation that reports every
//! problem rather than the first.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Ladder;
use crate::costs::{load_profile_rows, PriceBook, SrProfile, TranscodeProfile};
use crate::engine::{preset, EngineConfig, PolicyPreset, SimulationInput, PRESET_NAMES};
use crate::learning::SomConfig;
use crate::policy::ObjectiveWeights;
use crate::rng;
use crate::topology::{build_topology, NodeKind, Topology, TopologyConfig};
use crate::workload::{
    generate_requests, BandwidthTrace, ChurnSchedule, ClientSpec, ContentSpec, ServiceClass,
    WorkloadSpec,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0} problems found:\n{1}")]
    Invalid(usize, String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("workload error: {0}")]
    Workload(#[from] crate::workload::WorkloadError),
}

/// One validation finding with file context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.file, self.message)
    }
}

// ---------------------------------------------------------------------------
// File shapes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ScenarioFile {
    pub seed: u64,
    pub slots: u64,
    #[serde(default = "default_slot_duration")]
    pub slot_duration_s: f64,
    pub policy: String,
    #[serde(default)]
    pub out_dir: Option<String>,
    pub topology: String,
    pub ladder: String,
    pub catalog: String,
    #[serde(default)]
    pub transcode_profile: Option<String>,
    #[serde(default)]
    pub sr_profile: Option<String>,
    #[serde(default)]
    pub trace: Option<String>,
    pub workload: WorkloadSection,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub learning: LearningSection,
    #[serde(default)]
    pub pricing: PricingSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub seeding: SeedingSection,
}

fn default_slot_duration() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct WorkloadSection {
    /// Synthetic clients per edge for the edge-served trees; ignored for the
    /// hybrid P2P trees, where the topology's peers are the clients.
    #[serde(default)]
    pub clients_per_edge: usize,
    pub zipf_alpha: f64,
    #[serde(default = "default_live_deadline")]
    pub live_deadline_s: f64,
    #[serde(default = "default_vod_deadline")]
    pub vod_deadline_s: f64,
    #[serde(default)]
    pub churn: Option<ChurnSection>,
}

fn default_live_deadline() -> f64 {
    2.0
}

fn default_vod_deadline() -> f64 {
    4.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ChurnSection {
    pub initial_peers: usize,
    pub join_interval_s: f64,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
pub struct WeightsSection {
    /// Latency weight for the latency/cost trees.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Fetch-time, deviation, bitrate weights for the replacement tree.
    #[serde(default)]
    pub alpha: Option<[f64; 3]>,
    /// Serving-time vs deviation weights (summing to one).
    #[serde(default)]
    pub alpha_c: Option<f64>,
    #[serde(default)]
    pub beta_c: Option<f64>,
    /// Replacement window m.
    #[serde(default)]
    pub m: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct LearningSection {
    pub sigma: f64,
    pub w_latency: f64,
    pub w_penalty: f64,
    pub penalty_scale: f64,
}

impl Default for LearningSection {
    fn default() -> Self {
        let d = SomConfig::default();
        Self {
            sigma: d.sigma,
            w_latency: d.w_latency,
            w_penalty: d.w_penalty,
            penalty_scale: d.penalty_scale,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct PricingSection {
    pub bw_usd_per_gb: f64,
    pub cpu_usd_per_hour: f64,
}

impl Default for PricingSection {
    fn default() -> Self {
        Self {
            bw_usd_per_gb: 0.12,
            cpu_usd_per_hour: 0.029,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct EngineSection {
    #[serde(default = "default_true")]
    pub cache_fill: bool,
    #[serde(default = "default_watermark")]
    pub buffer_watermark_s: f64,
    #[serde(default = "default_watts")]
    pub eec_watts_per_core: f64,
    #[serde(default = "default_joint_limit")]
    pub joint_limit: u128,
    #[serde(default = "default_thr_comp")]
    pub thr_comp: f64,
    #[serde(default = "default_thr_miss")]
    pub thr_miss: u64,
    #[serde(default = "default_qoe_threshold")]
    pub qoe_threshold: f64,
    #[serde(default = "default_phase_step")]
    pub trace_phase_step_s: f64,
    #[serde(default)]
    pub leader_allocation: bool,
    #[serde(default = "default_sr_window")]
    pub sr_window: usize,
}

fn default_true() -> bool {
    true
}
fn default_watermark() -> f64 {
    24.0
}
fn default_watts() -> f64 {
    10.0
}
fn default_joint_limit() -> u128 {
    crate::policy::DEFAULT_JOINT_LIMIT
}
fn default_thr_comp() -> f64 {
    0.5
}
fn default_thr_miss() -> u64 {
    100
}
fn default_qoe_threshold() -> f64 {
    4.0
}
fn default_phase_step() -> f64 {
    7.0
}
fn default_sr_window() -> usize {
    1
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            cache_fill: true,
            buffer_watermark_s: default_watermark(),
            eec_watts_per_core: default_watts(),
            joint_limit: default_joint_limit(),
            thr_comp: default_thr_comp(),
            thr_miss: default_thr_miss(),
            qoe_threshold: default_qoe_threshold(),
            trace_phase_step_s: default_phase_step(),
            leader_allocation: false,
            sr_window: default_sr_window(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
pub struct SeedingSection {
    /// Fraction of each content's segments present on every CDN.
    #[serde(default)]
    pub cdn_segment_fraction: f64,
    /// Representation indices the CDNs hold for seeded segments.
    #[serde(default)]
    pub cdn_reps: Vec<usize>,
    /// Pre-cache the most popular content at the edges up to capacity.
    #[serde(default)]
    pub edge_prewarm: bool,
}

/// `ladder.toml`: representation list plus segment duration.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct LadderFile {
    pub segment_duration_s: f64,
    pub representations: Vec<LadderEntry>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct LadderEntry {
    pub bitrate_kbps: f64,
    pub resolution: String,
}

/// `catalog.toml`: the content list.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CatalogFile {
    pub contents: Vec<CatalogEntry>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CatalogEntry {
    pub content_id: String,
    pub kind: String,
    pub n_segments: u64,
    #[serde(default)]
    pub ladder_ref: Option<String>,
}

// ---------------------------------------------------------------------------
// Loading and validation
// ---------------------------------------------------------------------------

/// A fully resolved scenario, ready to build a [`SimulationInput`].
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub base_dir: PathBuf,
    pub topology: Topology,
    pub ladder: Ladder,
    pub contents: Vec<ContentSpec>,
    pub transcode: Arc<TranscodeProfile>,
    pub sr: Arc<SrProfile>,
    pub trace: BandwidthTrace,
    pub preset: PolicyPreset,
}

impl Scenario {
    /// Parses and cross-checks every referenced file, returning either the
    /// resolved scenario or the complete list of problems.
    pub fn load(path: &Path) -> Result<Scenario, Vec<Diagnostic>> {
        let mut diags = Vec::new();
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                return Err(vec![Diagnostic {
                    file: path.display().to_string(),
                    message: format!("cannot read: {e}"),
                }])
            }
        };
        let file: ScenarioFile = match toml::from_str(&text) {
            Ok(f) => f,
            Err(e) => {
                return Err(vec![Diagnostic {
                    file: path.display().to_string(),
                    message: format!("parse error: {e}"),
                }])
            }
        };
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let here = |name: &str| base_dir.join(name);
        let scen_name = path.display().to_string();

        // Policy preset and weight ranges.
        let mut preset_resolved = preset(&file.policy);
        if preset_resolved.is_none() {
            diags.push(Diagnostic {
                file: scen_name.clone(),
                message: format!(
                    "unknown policy {:?}; valid presets: {}",
                    file.policy,
                    PRESET_NAMES.join(", ")
                ),
            });
        }
        if let Some(beta) = file.weights.beta {
            if !(0.0..=1.0).contains(&beta) {
                diags.push(Diagnostic {
                    file: scen_name.clone(),
                    message: format!("weights.beta = {beta} outside [0, 1]"),
                });
            }
        }
        if let Some(alpha) = file.weights.alpha {
            for (i, a) in alpha.iter().enumerate() {
                if !(0.0..=1.0).contains(a) {
                    diags.push(Diagnostic {
                        file: scen_name.clone(),
                        message: format!("weights.alpha[{i}] = {a} outside [0, 1]"),
                    });
                }
            }
        }
        if let (Some(a), Some(b)) = (file.weights.alpha_c, file.weights.beta_c) {
            if (a + b - 1.0).abs() > 1e-9 {
                diags.push(Diagnostic {
                    file: scen_name.clone(),
                    message: format!("alpha_c + beta_c = {} must equal 1", a + b),
                });
            }
        }
        if !(file.slot_duration_s > 0.0) {
            diags.push(Diagnostic {
                file: scen_name.clone(),
                message: "slot_duration_s must be positive".into(),
            });
        }
        if !(0.0..=1.0).contains(&file.engine.thr_comp) {
            diags.push(Diagnostic {
                file: scen_name.clone(),
                message: format!("engine.thr_comp = {} outside [0, 1]", file.engine.thr_comp),
            });
        }

        // Topology.
        let topology = match fs::read_to_string(here(&file.topology)) {
            Err(e) => {
                diags.push(Diagnostic {
                    file: here(&file.topology).display().to_string(),
                    message: format!("cannot read: {e}"),
                });
                None
            }
            Ok(text) => match toml::from_str::<TopologyFile>(&text) {
                Err(e) => {
                    diags.push(Diagnostic {
                        file: file.topology.clone(),
                        message: format!("parse error: {e}"),
                    });
                    None
                }
                Ok(tf) => match build_topology(tf.into_config()) {
                    Err(e) => {
                        diags.push(Diagnostic {
                            file: file.topology.clone(),
                            message: e.to_string(),
                        });
                        None
                    }
                    Ok(t) => Some(t),
                },
            },
        };

        // Ladder.
        let ladder = match fs::read_to_string(here(&file.ladder)) {
            Err(e) => {
                diags.push(Diagnostic {
                    file: here(&file.ladder).display().to_string(),
                    message: format!("cannot read: {e}"),
                });
                None
            }
            Ok(text) => match toml::from_str::<LadderFile>(&text) {
                Err(e) => {
                    diags.push(Diagnostic {
                        file: file.ladder.clone(),
                        message: format!("parse error: {e}"),
                    });
                    None
                }
                Ok(lf) => {
                    let pairs: Vec<(f64, &str)> = lf
                        .representations
                        .iter()
                        .map(|r| (r.bitrate_kbps * 1e3, r.resolution.as_str()))
                        .collect();
                    match Ladder::new(&pairs, lf.segment_duration_s) {
                        Err(e) => {
                            diags.push(Diagnostic {
                                file: file.ladder.clone(),
                                message: e.to_string(),
                            });
                            None
                        }
                        Ok(l) => Some(l),
                    }
                }
            },
        };

        // Catalog.
        let contents = match fs::read_to_string(here(&file.catalog)) {
            Err(e) => {
                diags.push(Diagnostic {
                    file: here(&file.catalog).display().to_string(),
                    message: format!("cannot read: {e}"),
                });
                None
            }
            Ok(text) => match toml::from_str::<CatalogFile>(&text) {
                Err(e) => {
                    diags.push(Diagnostic {
                        file: file.catalog.clone(),
                        message: format!("parse error: {e}"),
                    });
                    None
                }
                Ok(cf) => {
                    let mut out = Vec::new();
                    for entry in &cf.contents {
                        let kind = match entry.kind.as_str() {
                            "live" => Some(ServiceClass::Live),
                            "vod" => Some(ServiceClass::Vod),
                            other => {
                                diags.push(Diagnostic {
                                    file: file.catalog.clone(),
                                    message: format!(
                                        "content {:?} has kind {other:?}, expected live|vod",
                                        entry.content_id
                                    ),
                                });
                                None
                            }
                        };
                        if entry.n_segments == 0 {
                            diags.push(Diagnostic {
                                file: file.catalog.clone(),
                                message: format!("content {:?} has zero segments", entry.content_id),
                            });
                        }
                        if let Some(kind) = kind {
                            out.push(ContentSpec {
                                content_id: entry.content_id.clone(),
                                kind,
                                n_segments: entry.n_segments,
                            });
                        }
                    }
                    if out.is_empty() {
                        diags.push(Diagnostic {
                            file: file.catalog.clone(),
                            message: "catalog lists no contents".into(),
                        });
                        None
                    } else {
                        Some(out)
                    }
                }
            },
        };

        // Profiles (optional files, built-in tables otherwise).
        let transcode = match &file.transcode_profile {
            None => Some(TranscodeProfile::measured_default()),
            Some(name) => match fs::read_to_string(here(name)) {
                Err(e) => {
                    diags.push(Diagnostic {
                        file: here(name).display().to_string(),
                        message: format!("cannot read: {e}"),
                    });
                    None
                }
                Ok(text) => match load_profile_rows(text.as_bytes())
                    .and_then(|(rows, dur)| TranscodeProfile::new(rows, dur))
                {
                    Err(e) => {
                        diags.push(Diagnostic {
                            file: name.clone(),
                            message: e.to_string(),
                        });
                        None
                    }
                    Ok(p) => Some(p),
                },
            },
        };
        let sr = match &file.sr_profile {
            None => Some(SrProfile::bundled_default()),
            Some(name) => match fs::read_to_string(here(name)) {
                Err(e) => {
                    diags.push(Diagnostic {
                        file: here(name).display().to_string(),
                        message: format!("cannot read: {e}"),
                    });
                    None
                }
                Ok(text) => match load_profile_rows(text.as_bytes())
                    .and_then(|(rows, dur)| SrProfile::new(rows, dur))
                {
                    Err(e) => {
                        diags.push(Diagnostic {
                            file: name.clone(),
                            message: e.to_string(),
                        });
                        None
                    }
                    Ok(p) => Some(p),
                },
            },
        };

        // Trace (optional; defaults to the 3.78 Mbps constant).
        let trace = match &file.trace {
            None => Some(BandwidthTrace::constant(3.78e6)),
            Some(name) => match fs::File::open(here(name)) {
                Err(e) => {
                    diags.push(Diagnostic {
                        file: here(name).display().to_string(),
                        message: format!("cannot read: {e}"),
                    });
                    None
                }
                Ok(f) => match BandwidthTrace::from_csv(f) {
                    Err(e) => {
                        diags.push(Diagnostic {
                            file: name.clone(),
                            message: e.to_string(),
                        });
                        None
                    }
                    Ok(t) => Some(t),
                },
            },
        };

        // Cross-checks that need several files.
        if let (Some(topo), Some(p)) = (&topology, &preset_resolved) {
            if p.tree.is_p2p() {
                if topo.nodes().all(|n| !n.kind.is_peer()) {
                    diags.push(Diagnostic {
                        file: scen_name.clone(),
                        message: format!(
                            "policy {:?} needs peer nodes in the topology",
                            file.policy
                        ),
                    });
                }
            } else if file.workload.clients_per_edge == 0 {
                diags.push(Diagnostic {
                    file: scen_name.clone(),
                    message: "workload.clients_per_edge must be positive for edge-served trees"
                        .into(),
                });
            }
            if topo.nodes().all(|n| n.kind != NodeKind::Edge) {
                diags.push(Diagnostic {
                    file: file.topology.clone(),
                    message: "topology has no edge node".into(),
                });
            }
        }
        if let (Some(ladder), Some(_)) = (&ladder, &contents) {
            for rep in &file.seeding.cdn_reps {
                if *rep >= ladder.len() {
                    diags.push(Diagnostic {
                        file: scen_name.clone(),
                        message: format!("seeding.cdn_reps index {rep} outside the ladder"),
                    });
                }
            }
        }

        if !diags.is_empty() {
            return Err(diags);
        }
        let mut preset_final = preset_resolved.take().expect("validated");
        apply_weights(&mut preset_final, &file.weights);
        Ok(Scenario {
            base_dir,
            topology: topology.expect("validated"),
            ladder: ladder.expect("validated"),
            contents: contents.expect("validated"),
            transcode: Arc::new(transcode.expect("validated")),
            sr: Arc::new(sr.expect("validated")),
            trace: trace.expect("validated"),
            preset: preset_final,
            file,
        })
    }

    /// Validation-only entry point: empty list means the scenario is sound.
    pub fn validate(path: &Path) -> Vec<Diagnostic> {
        match Scenario::load(path) {
            Ok(_) => Vec::new(),
            Err(diags) => diags,
        }
    }

    /// Builds the engine input, generating the request stream and cache
    /// seeding deterministically from the scenario seed.
    pub fn to_simulation_input(
        &self,
        seed_override: Option<u64>,
        slots_override: Option<u64>,
        policy_override: Option<&str>,
    ) -> Result<SimulationInput, ScenarioError> {
        let seed = seed_override.unwrap_or(self.file.seed);
        let slots = slots_override.unwrap_or(self.file.slots);
        let mut preset_final = match policy_override {
            None => self.preset.clone(),
            Some(name) => {
                let mut p = preset(name).ok_or_else(|| {
                    ScenarioError::Invalid(
                        1,
                        format!(
                            "unknown policy {name:?}; valid presets: {}",
                            PRESET_NAMES.join(", ")
                        ),
                    )
                })?;
                apply_weights(&mut p, &self.file.weights);
                p
            }
        };
        // A latency/cost preset with explicit beta keeps it after override.
        apply_weights(&mut preset_final, &self.file.weights);

        let clients = self.build_clients(&preset_final);
        let spec = WorkloadSpec {
            clients: clients.clone(),
            contents: self.contents.clone(),
            zipf_alpha: self.file.workload.zipf_alpha,
            slots,
            slot_duration_s: self.file.slot_duration_s,
            segment_duration_s: self.ladder.segment_duration_s,
            live_deadline_s: self.file.workload.live_deadline_s,
            vod_deadline_s: self.file.workload.vod_deadline_s,
        };
        let requests = generate_requests(&spec, seed)?;
        let seeded_cache = self.seed_caches(seed);

        let mut transcode = (*self.transcode).clone();
        transcode.set_edge_speed_factor(1.0);
        let config = EngineConfig {
            slot_duration_s: self.file.slot_duration_s,
            slots,
            cache_fill: self.file.engine.cache_fill,
            buffer_watermark_s: self.file.engine.buffer_watermark_s,
            eec_watts_per_core: self.file.engine.eec_watts_per_core,
            joint_limit: self.file.engine.joint_limit,
            thr_comp: self.file.engine.thr_comp,
            thr_miss: self.file.engine.thr_miss,
            som: SomConfig {
                sigma: self.file.learning.sigma,
                w_latency: self.file.learning.w_latency,
                w_penalty: self.file.learning.w_penalty,
                penalty_scale: self.file.learning.penalty_scale,
            },
            qoe_threshold: self.file.engine.qoe_threshold,
            trace_phase_step_s: self.file.engine.trace_phase_step_s,
            leader_allocation: self.file.engine.leader_allocation
                || preset_final.name == "leader",
            replacement_window: self.file.weights.m.unwrap_or(3),
            sr_window: self.file.engine.sr_window,
        };
        Ok(SimulationInput {
            topology: self.topology.clone(),
            ladder: self.ladder.clone(),
            contents: self.contents.clone(),
            clients,
            requests,
            trace: self.trace.clone(),
            transcode: Arc::new(transcode),
            sr: self.sr.clone(),
            prices: PriceBook::from_gb_and_hour(
                self.file.pricing.bw_usd_per_gb,
                self.file.pricing.cpu_usd_per_hour,
            ),
            preset: preset_final,
            config,
            seeded_cache,
            seed,
        })
    }

    fn build_clients(&self, preset_final: &PolicyPreset) -> Vec<ClientSpec> {
        if preset_final.tree.is_p2p() {
            // Peers are the clients; churn reassigns their windows.
            let peers: Vec<_> = self
                .topology
                .nodes()
                .filter(|n| n.kind.is_peer())
                .collect();
            let windows = self.file.workload.churn.as_ref().map(|c| {
                ChurnSchedule {
                    initial_peers: c.initial_peers,
                    join_interval_s: c.join_interval_s,
                    leave_events: Vec::new(),
                }
                .activation_windows(peers.len())
            });
            // Peers attach to the nearest edge in id order round-robin when
            // the topology does not link them; the serving edge is the
            // region anchor.
            let edges: Vec<String> = self
                .topology
                .nodes()
                .filter(|n| n.kind == NodeKind::Edge)
                .map(|n| n.id.clone())
                .collect();
            peers
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let (join, leave) = windows
                        .as_ref()
                        .map(|w| w[i])
                        .unwrap_or((n.join_time, n.leave_time));
                    ClientSpec {
                        id: n.id.clone(),
                        edge_id: edges[i % edges.len()].clone(),
                        join_s: join,
                        leave_s: leave,
                    }
                })
                .collect()
        } else {
            let edges: Vec<String> = self
                .topology
                .nodes()
                .filter(|n| n.kind == NodeKind::Edge)
                .map(|n| n.id.clone())
                .collect();
            let mut out = Vec::new();
            for edge in &edges {
                for i in 0..self.file.workload.clients_per_edge {
                    out.push(ClientSpec {
                        id: format!("{edge}-c{i:03}"),
                        edge_id: edge.clone(),
                        join_s: 0.0,
                        leave_s: None,
                    });
                }
            }
            out
        }
    }

    /// Deterministic cache seeding: every CDN holds `cdn_segment_fraction`
    /// of each content's segments at the configured reps; edges prewarm the
    /// most popular content up to capacity.
    fn seed_caches(&self, seed: u64) -> Vec<(String, crate::catalog::SegmentId, usize)> {
        use rand::Rng;
        let mut out = Vec::new();
        let fraction = self.file.seeding.cdn_segment_fraction;
        let reps: Vec<usize> = if self.file.seeding.cdn_reps.is_empty() {
            (0..self.ladder.len()).collect()
        } else {
            self.file.seeding.cdn_reps.clone()
        };
        if fraction > 0.0 {
            let cdns: Vec<String> = self
                .topology
                .nodes()
                .filter(|n| n.kind == NodeKind::Cdn)
                .map(|n| n.id.clone())
                .collect();
            for (ci, cdn) in cdns.iter().enumerate() {
                let mut draw = rng::stream(seed, "seeding/cdn", ci as u64);
                for content in &self.contents {
                    for idx in 0..content.n_segments {
                        if draw.gen::<f64>() < fraction {
                            let seg = crate::catalog::SegmentId::new(&content.content_id, idx);
                            for rep in &reps {
                                out.push((cdn.clone(), seg.clone(), *rep));
                            }
                        }
                    }
                }
            }
        }
        if self.file.seeding.edge_prewarm {
            if let Some(content) = self.contents.first() {
                for node in self.topology.nodes() {
                    if node.kind != NodeKind::Edge || node.cache_capacity == 0 {
                        continue;
                    }
                    let mut inserted = 0usize;
                    'fill: for idx in 0..content.n_segments {
                        for rep in (0..self.ladder.len()).rev() {
                            if inserted >= node.cache_capacity {
                                break 'fill;
                            }
                            out.push((
                                node.id.clone(),
                                crate::catalog::SegmentId::new(&content.content_id, idx),
                                rep,
                            ));
                            inserted += 1;
                        }
                    }
                }
            }
        }
        out
    }
}

fn apply_weights(preset: &mut PolicyPreset, weights: &WeightsSection) {
    match &mut preset.weights {
        ObjectiveWeights::LatencyCost { beta } => {
            if let Some(b) = weights.beta {
                *beta = b;
            }
        }
        ObjectiveWeights::EsHas { a1, a2, a3 } => {
            if let Some([x1, x2, x3]) = weights.alpha {
                *a1 = x1;
                *a2 = x2;
                *a3 = x3;
            }
        }
        ObjectiveWeights::Csdn { alpha, beta } => {
            if let (Some(a), Some(b)) = (weights.alpha_c, weights.beta_c) {
                *alpha = a;
                *beta = b;
            }
        }
        ObjectiveWeights::LatencyOnly => {}
    }
}

/// `topology.toml` shape: capacities in Mbps, converted to bits/s.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct TopologyFile {
    pub nodes: Vec<TopologyNode>,
    pub links: Vec<TopologyLink>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct TopologyNode {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub cpu: f64,
    #[serde(default)]
    pub power: f64,
    #[serde(default)]
    pub cache: usize,
    #[serde(default)]
    pub join: f64,
    #[serde(default)]
    pub leave: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct TopologyLink {
    pub id: String,
    pub a: String,
    pub b: String,
    pub mbps: f64,
}

impl TopologyFile {
    pub fn into_config(self) -> TopologyConfig {
        TopologyConfig {
            nodes: self
                .nodes
                .into_iter()
                .map(|n| crate::topology::NodeSpec {
                    id: n.id,
                    kind: match n.kind.as_str() {
                        "origin" => NodeKind::Origin,
                        "cdn" => NodeKind::Cdn,
                        "edge" => NodeKind::Edge,
                        "seeder" => NodeKind::PeerSeeder,
                        "leecher" => NodeKind::PeerLeecher,
                        // Unknown kinds become edges; build_topology will
                        // catch structural problems (e.g. no origin).
                        _ => NodeKind::Edge,
                    },
                    cpu_capacity: n.cpu,
                    power_capacity: n.power,
                    cache_capacity: n.cache,
                    join_time: n.join,
                    leave_time: n.leave,
                })
                .collect(),
            links: self
                .links
                .into_iter()
                .map(|l| crate::topology::LinkSpec {
                    id: l.id,
                    endpoints: (l.a, l.b),
                    capacity_bps: l.mbps * 1e6,
                })
                .collect(),
        }
    }
}

/// The demands file for the standalone fairness allocation command.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct DemandsFile {
    pub links: Vec<DemandLink>,
    #[serde(default)]
    pub flows: Vec<DemandFlow>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct DemandLink {
    pub id: String,
    pub capacity_mbps: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct DemandFlow {
    pub edge: String,
    pub server: String,
    pub demand_mbps: f64,
    pub links: Vec<String>,
}

impl DemandsFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let parsed: DemandsFile = toml::from_str(text).map_err(|e| e.to_string())?;
        let known: BTreeSet<&str> = parsed.links.iter().map(|l| l.id.as_str()).collect();
        for flow in &parsed.flows {
            for link in &flow.links {
                if !known.contains(link.as_str()) {
                    return Err(format!(
                        "flow {}->{} references unknown link {:?}",
                        flow.edge, flow.server, link
                    ));
                }
            }
        }
        Ok(parsed)
    }
}
