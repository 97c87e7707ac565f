//! Cost models: transmission time, table-driven transcode and
//! super-resolution costs, and monetary pricing.
//!
//! Transcode and super-resolution tables carry whole-video measurements; the
//! lookup divides them down to per-segment values. Table rows for peer PCs
//! and mobile peers come from device measurements; edge servers reuse the PC
//! rows scaled by a configurable speed factor.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("transmission over zero bandwidth is infeasible")]
    Infeasible,
    #[error("no profile rows for input {input_bps} bps, class {class:?}")]
    MissingProfile { input_bps: f64, class: NodeClass },
    #[error("profile row must have {expected} for {kind} tables")]
    BadRowDirection {
        kind: &'static str,
        expected: &'static str,
    },
    #[error("profile parse error: {0}")]
    Parse(String),
}

/// Hardware class executing a transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeClass {
    Edge,
    PeerPc,
    PeerMobile,
}

/// One table row, whole-video values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub input_bps: f64,
    pub output_bps: f64,
    pub class: NodeClass,
    pub time_s: f64,
    pub cpu_s: f64,
    pub power_mah: f64,
    pub vmaf: f64,
}

/// Per-segment cost of one transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformCost {
    pub time_s: f64,
    pub cpu_s: f64,
    pub power_mah: f64,
    pub vmaf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TableKind {
    Transcode,
    SuperResolve,
}

#[derive(Debug, Clone)]
struct ProfileTable {
    kind: TableKind,
    video_duration_s: f64,
    rows: Vec<ProfileRow>,
    /// Edge rows reuse PC rows with time and cpu divided by this factor.
    edge_speed_factor: f64,
}

impl ProfileTable {
    fn validate(&self) -> Result<(), CostError> {
        for row in &self.rows {
            let ok = match self.kind {
                TableKind::Transcode => row.output_bps < row.input_bps,
                TableKind::SuperResolve => row.output_bps > row.input_bps,
            };
            if !ok {
                return Err(CostError::BadRowDirection {
                    kind: match self.kind {
                        TableKind::Transcode => "transcode",
                        TableKind::SuperResolve => "super-resolution",
                    },
                    expected: match self.kind {
                        TableKind::Transcode => "output < input",
                        TableKind::SuperResolve => "output > input",
                    },
                });
            }
        }
        Ok(())
    }

    fn lookup(
        &self,
        input_bps: f64,
        output_bps: f64,
        class: NodeClass,
        segment_duration_s: f64,
    ) -> Result<TransformCost, CostError> {
        let (effective_class, scale) = match class {
            NodeClass::Edge if !self.rows.iter().any(|r| r.class == NodeClass::Edge) => {
                (NodeClass::PeerPc, 1.0 / self.edge_speed_factor)
            }
            c => (c, 1.0),
        };
        let mut inputs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.class == effective_class)
            .map(|r| r.input_bps)
            .collect();
        inputs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        inputs.dedup();
        if inputs.is_empty() {
            return Err(CostError::MissingProfile {
                input_bps,
                class,
            });
        }
        // Nearest measured input group; the ladder's nominal bitrates differ
        // slightly from the encoder's real output bitrates in the tables.
        let input_group = *inputs
            .iter()
            .min_by(|a, b| {
                let da = (*a - input_bps).abs();
                let db = (*b - input_bps).abs();
                da.partial_cmp(&db)
                    .unwrap()
                    .then(a.partial_cmp(b).unwrap())
            })
            .expect("non-empty inputs");
        let mut group: Vec<&ProfileRow> = self
            .rows
            .iter()
            .filter(|r| r.class == effective_class && r.input_bps == input_group)
            .collect();
        group.sort_by(|a, b| a.output_bps.partial_cmp(&b.output_bps).unwrap());

        let video_row = interpolate_in_output(&group, output_bps);
        let per_segment = self.video_duration_s / segment_duration_s;
        Ok(TransformCost {
            time_s: video_row.0 * scale / per_segment,
            cpu_s: video_row.1 * scale / per_segment,
            power_mah: video_row.2 / per_segment,
            vmaf: video_row.3,
        })
    }
}

/// Linear interpolation in output bitrate between bracketing rows, clamping
/// at the range ends. Exact rows reproduce the table bit-exactly.
fn interpolate_in_output(group: &[&ProfileRow], output_bps: f64) -> (f64, f64, f64, f64) {
    if let Some(row) = group.iter().find(|r| r.output_bps == output_bps) {
        return (row.time_s, row.cpu_s, row.power_mah, row.vmaf);
    }
    let first = group.first().expect("group is non-empty");
    let last = group.last().expect("group is non-empty");
    if output_bps <= first.output_bps {
        return (first.time_s, first.cpu_s, first.power_mah, first.vmaf);
    }
    if output_bps >= last.output_bps {
        return (last.time_s, last.cpu_s, last.power_mah, last.vmaf);
    }
    let hi = group
        .iter()
        .position(|r| r.output_bps > output_bps)
        .expect("output below last row");
    let (a, b) = (group[hi - 1], group[hi]);
    let w = (output_bps - a.output_bps) / (b.output_bps - a.output_bps);
    (
        a.time_s + w * (b.time_s - a.time_s),
        a.cpu_s + w * (b.cpu_s - a.cpu_s),
        a.power_mah + w * (b.power_mah - a.power_mah),
        a.vmaf + w * (b.vmaf - a.vmaf),
    )
}

/// Transcoding cost table (output bitrate below input).
#[derive(Debug, Clone)]
pub struct TranscodeProfile {
    table: ProfileTable,
}

/// Super-resolution cost table (output bitrate above input; sources are one
/// ladder step below the target).
#[derive(Debug, Clone)]
pub struct SrProfile {
    table: ProfileTable,
}

fn row(
    input_kbps: f64,
    output_kbps: f64,
    class: NodeClass,
    time_s: f64,
    power_mah: f64,
    vmaf: f64,
) -> ProfileRow {
    ProfileRow {
        input_bps: input_kbps * 1e3,
        output_bps: output_kbps * 1e3,
        class,
        time_s,
        // cpu-seconds = wall seconds x cores used; single-core measurements.
        cpu_s: time_s,
        power_mah,
        vmaf,
    }
}

impl TranscodeProfile {
    pub fn new(rows: Vec<ProfileRow>, video_duration_s: f64) -> Result<Self, CostError> {
        let table = ProfileTable {
            kind: TableKind::Transcode,
            video_duration_s,
            rows,
            edge_speed_factor: 1.0,
        };
        table.validate()?;
        Ok(Self { table })
    }

    pub fn set_edge_speed_factor(&mut self, factor: f64) {
        self.table.edge_speed_factor = factor;
    }

    /// The measured 3-minute-video transcode table for PC and mobile peers.
    /// Power is derived from the device battery measurements (4000 mAh
    /// battery assumed; see the cost-model chapter of the guide).
    pub fn measured_default() -> Self {
        use NodeClass::{PeerMobile, PeerPc};
        let rows = vec![
            row(4219.0, 89.0, PeerPc, 4.31, 0.65, 15.38),
            row(4219.0, 262.0, PeerPc, 5.33, 0.80, 44.61),
            row(4219.0, 791.0, PeerPc, 11.74, 1.76, 76.21),
            row(4219.0, 2484.0, PeerPc, 20.44, 3.07, 93.33),
            row(2484.0, 89.0, PeerPc, 3.80, 0.57, 14.35),
            row(2484.0, 262.0, PeerPc, 4.83, 0.72, 42.27),
            row(2484.0, 791.0, PeerPc, 11.36, 1.70, 71.56),
            row(791.0, 89.0, PeerPc, 2.05, 0.31, 12.21),
            row(791.0, 262.0, PeerPc, 3.35, 0.50, 36.33),
            row(262.0, 89.0, PeerPc, 1.28, 0.19, 11.01),
            row(4219.0, 89.0, PeerMobile, 15.98, 8.79, 13.75),
            row(4219.0, 262.0, PeerMobile, 18.32, 10.08, 42.13),
            row(4219.0, 791.0, PeerMobile, 39.28, 21.60, 73.14),
            row(4219.0, 2484.0, PeerMobile, 74.91, 41.20, 91.53),
            row(2484.0, 89.0, PeerMobile, 16.55, 9.10, 13.01),
            row(2484.0, 262.0, PeerMobile, 18.82, 10.35, 40.02),
            row(2484.0, 791.0, PeerMobile, 39.76, 21.87, 69.06),
            row(791.0, 89.0, PeerMobile, 10.43, 5.74, 11.24),
            row(791.0, 262.0, PeerMobile, 14.81, 8.15, 34.76),
            row(262.0, 89.0, PeerMobile, 5.85, 3.22, 10.32),
        ];
        Self::new(rows, 180.0).expect("static table is valid")
    }
}

impl SrProfile {
    pub fn new(rows: Vec<ProfileRow>, video_duration_s: f64) -> Result<Self, CostError> {
        let table = ProfileTable {
            kind: TableKind::SuperResolve,
            video_duration_s,
            rows,
            edge_speed_factor: 1.0,
        };
        table.validate()?;
        Ok(Self { table })
    }

    /// Bundled per-ladder-step upscaling costs. Times are sub-real-time
    /// constants for the PC and mobile upscalers; power anchors come from the
    /// measured battery shares of the two studied steps, extrapolated
    /// upward (5-minute videos, 4000 mAh battery).
    pub fn bundled_default() -> Self {
        use NodeClass::{PeerMobile, PeerPc};
        let rows = vec![
            row(89.0, 262.0, PeerPc, 90.0, 123.6, 55.0),
            row(262.0, 791.0, PeerPc, 120.0, 241.2, 70.0),
            row(791.0, 2400.0, PeerPc, 180.0, 480.0, 80.0),
            row(2400.0, 4200.0, PeerPc, 240.0, 960.0, 85.0),
            row(89.0, 262.0, PeerMobile, 135.0, 185.4, 52.0),
            row(262.0, 791.0, PeerMobile, 180.0, 361.8, 67.0),
            row(791.0, 2400.0, PeerMobile, 270.0, 720.0, 77.0),
            row(2400.0, 4200.0, PeerMobile, 360.0, 1440.0, 82.0),
        ];
        Self::new(rows, 300.0).expect("static table is valid")
    }
}

/// Per-segment transcode cost for turning `input_bps` into `output_bps` on
/// `class` hardware; exact rows hit the table, other outputs interpolate.
pub fn transcode_lookup(
    profile: &TranscodeProfile,
    input_bps: f64,
    output_bps: f64,
    class: NodeClass,
    segment_duration_s: f64,
) -> Result<TransformCost, CostError> {
    profile
        .table
        .lookup(input_bps, output_bps, class, segment_duration_s)
}

/// Per-segment super-resolution cost, same mechanics as [`transcode_lookup`].
pub fn sr_lookup(
    profile: &SrProfile,
    input_bps: f64,
    output_bps: f64,
    class: NodeClass,
    segment_duration_s: f64,
) -> Result<TransformCost, CostError> {
    profile
        .table
        .lookup(input_bps, output_bps, class, segment_duration_s)
}

/// Loads the `in_kbps,out_kbps,class,time_s,cpu_s,power_mah,vmaf` CSV.
/// The video duration rides in a leading `# video_duration_s = <secs>`
/// comment line.
pub fn load_profile_rows<R: Read>(reader: R) -> Result<(Vec<ProfileRow>, f64), CostError> {
    let mut content = String::new();
    let mut reader = reader;
    reader
        .read_to_string(&mut content)
        .map_err(|e| CostError::Parse(e.to_string()))?;
    let mut duration = None;
    for line in content.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((key, value)) = rest.split_once('=') {
                if key.trim() == "video_duration_s" {
                    duration = Some(
                        value
                            .trim()
                            .parse::<f64>()
                            .map_err(|e| CostError::Parse(format!("video_duration_s: {e}")))?,
                    );
                }
            }
        }
    }
    let duration =
        duration.ok_or_else(|| CostError::Parse("missing # video_duration_s header".into()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(content.as_bytes());
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CostError::Parse(e.to_string()))?;
        let field = |i: usize, name: &str| -> Result<f64, CostError> {
            record
                .get(i)
                .ok_or_else(|| CostError::Parse(format!("missing {name}")))?
                .parse::<f64>()
                .map_err(|e| CostError::Parse(format!("{name}: {e}")))
        };
        let class = match record.get(2).unwrap_or("") {
            "Edge" => NodeClass::Edge,
            "PeerPC" => NodeClass::PeerPc,
            "PeerMobile" => NodeClass::PeerMobile,
            other => return Err(CostError::Parse(format!("unknown class {other:?}"))),
        };
        rows.push(ProfileRow {
            input_bps: field(0, "in_kbps")? * 1e3,
            output_bps: field(1, "out_kbps")? * 1e3,
            class,
            time_s: field(3, "time_s")?,
            cpu_s: field(4, "cpu_s")?,
            power_mah: field(5, "power_mah")?,
            vmaf: field(6, "vmaf")?,
        });
    }
    Ok((rows, duration))
}

/// Bandwidth and compute prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBook {
    /// Dollars per bit transferred on priced links.
    pub bw_usd_per_bit: f64,
    /// Dollars per cpu-second at the edge.
    pub cpu_usd_per_second: f64,
}

impl PriceBook {
    /// From the commonly quoted units: $/GB of traffic (decimal gigabytes)
    /// and $/CPU-hour.
    pub fn from_gb_and_hour(usd_per_gb: f64, usd_per_cpu_hour: f64) -> Self {
        Self {
            bw_usd_per_bit: usd_per_gb / 8e9,
            cpu_usd_per_second: usd_per_cpu_hour / 3600.0,
        }
    }

    /// 0.12 $/GB and 0.029 $/CPU-hour.
    pub fn default_cloud() -> Self {
        Self::from_gb_and_hour(0.12, 0.029)
    }
}

/// Bandwidth dollars, compute dollars, and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub bandwidth_usd: f64,
    pub compute_usd: f64,
    pub total_usd: f64,
}

/// Transmission latency: exactly `size / bandwidth`.
pub fn transmission_time(size_bits: f64, bandwidth_bps: f64) -> Result<f64, CostError> {
    if !(bandwidth_bps > 0.0) {
        return Err(CostError::Infeasible);
    }
    Ok(size_bits / bandwidth_bps)
}

/// Prices traffic on CDN/origin/edge links and edge cpu-seconds.
pub fn monetary_cost(
    bits_on_priced_links: f64,
    edge_cpu_seconds: f64,
    prices: &PriceBook,
) -> CostBreakdown {
    let bandwidth_usd = bits_on_priced_links * prices.bw_usd_per_bit;
    let compute_usd = edge_cpu_seconds * prices.cpu_usd_per_second;
    CostBreakdown {
        bandwidth_usd,
        compute_usd,
        total_usd: bandwidth_usd + compute_usd,
    }
}
