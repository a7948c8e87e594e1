//! Per-edge-round records and their CSV form.
//!
//! Floats are written with 17 significant digits so a parsed trace equals
//! the one written. List fields are `;`-separated; fields that only exist at
//! the last edge round of a global round are empty elsewhere.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::sim::config::Method;

pub const SCHEMA_VERSION: u32 = 1;

pub const COLUMNS: [&str; 26] = [
    "schema_version",
    "method",
    "seed",
    "t",
    "r",
    "device_bandwidth",
    "device_frequency",
    "device_snr",
    "device_local_iters",
    "device_energy",
    "cumulative_energy",
    "cluster_budget",
    "cluster_time",
    "cluster_sync_time",
    "backhaul_bandwidth",
    "active_edges",
    "global_time",
    "cumulative_time",
    "consensus_bound",
    "upsilon_max",
    "consensus_average",
    "max_staleness",
    "zeta",
    "train_loss",
    "test_accuracy",
    "test_loss",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub method: Method,
    pub seed: u64,
    pub t: usize,
    pub r: usize,
    pub device_bandwidth: Vec<f64>,
    pub device_frequency: Vec<f64>,
    /// Linear SNR.
    pub device_snr: Vec<f64>,
    pub device_local_iters: Vec<u32>,
    pub device_energy: Vec<f64>,
    pub cumulative_energy: Vec<f64>,
    pub cluster_budget: Vec<f64>,
    /// Edge-round time of each cluster.
    pub cluster_time: Vec<f64>,
    pub cluster_sync_time: Option<Vec<f64>>,
    /// Upper triangle of this global round's backhaul rates, row by row.
    pub backhaul_bandwidth: Vec<f64>,
    pub active_edges: Adjacency,
    pub global_time: Option<f64>,
    /// Simulated time since the start of the run at the end of this round.
    pub cumulative_time: f64,
    /// Estimated consensus distance on the chosen topology.
    pub consensus_bound: Option<f64>,
    pub upsilon_max: Option<f64>,
    /// Mean distance of server models from their average.
    pub consensus_average: f64,
    pub max_staleness: Option<u32>,
    pub zeta: Option<f64>,
    pub train_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| float(*x)).collect::<Vec<_>>().join(";")
}

fn opt<T>(v: &Option<T>, f: impl Fn(&T) -> String) -> String {
    v.as_ref().map(f).unwrap_or_default()
}

impl RoundTrace {
    fn record(&self) -> Vec<String> {
        vec![
            SCHEMA_VERSION.to_string(),
            self.method.to_string(),
            self.seed.to_string(),
            self.t.to_string(),
            self.r.to_string(),
            floats(&self.device_bandwidth),
            floats(&self.device_frequency),
            floats(&self.device_snr),
            self.device_local_iters.iter().map(u32::to_string).collect::<Vec<_>>().join(";"),
            floats(&self.device_energy),
            floats(&self.cumulative_energy),
            floats(&self.cluster_budget),
            floats(&self.cluster_time),
            opt(&self.cluster_sync_time, |v| floats(v)),
            floats(&self.backhaul_bandwidth),
            self.active_edges.upper_bits(),
            opt(&self.global_time, |x| float(*x)),
            float(self.cumulative_time),
            opt(&self.consensus_bound, |x| float(*x)),
            opt(&self.upsilon_max, |x| float(*x)),
            float(self.consensus_average),
            opt(&self.max_staleness, u32::to_string),
            opt(&self.zeta, |x| float(*x)),
            opt(&self.train_loss, |x| float(*x)),
            opt(&self.test_accuracy, |x| float(*x)),
            opt(&self.test_loss, |x| float(*x)),
        ]
    }

    pub fn total_energy(&self) -> f64 {
        self.cumulative_energy.iter().sum()
    }
}

pub fn write_csv<W: Write>(writer: W, traces: &[RoundTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for t in traces {
        w.write_record(t.record())?;
    }
    w.flush()?;
    Ok(())
}

fn parse_err(row: usize, col: &str, e: impl std::fmt::Display) -> Error {
    Error::Data(format!("row {row}, column {col}: {e}"))
}

fn parse_list<T: std::str::FromStr>(s: &str, row: usize, col: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|x| x.parse().map_err(|e| parse_err(row, col, e))).collect()
}

fn parse_opt<T: std::str::FromStr>(s: &str, row: usize, col: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e| parse_err(row, col, e))
    }
}

fn parse_one<T: std::str::FromStr>(s: &str, row: usize, col: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| parse_err(row, col, e))
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<RoundTrace>> {
    let mut rd = csv::Reader::from_reader(reader);
    let header = rd.headers()?.clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::Data("unexpected CSV header".into()));
    }
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let version: u32 = parse_one(f(0), row, COLUMNS[0])?;
        if version != SCHEMA_VERSION {
            return Err(parse_err(row, COLUMNS[0], format!("unsupported version {version}")));
        }
        let cluster_time: Vec<f64> = parse_list(f(12), row, COLUMNS[12])?;
        out.push(RoundTrace {
            method: f(1).parse()?,
            seed: parse_one(f(2), row, COLUMNS[2])?,
            t: parse_one(f(3), row, COLUMNS[3])?,
            r: parse_one(f(4), row, COLUMNS[4])?,
            device_bandwidth: parse_list(f(5), row, COLUMNS[5])?,
            device_frequency: parse_list(f(6), row, COLUMNS[6])?,
            device_snr: parse_list(f(7), row, COLUMNS[7])?,
            device_local_iters: parse_list(f(8), row, COLUMNS[8])?,
            device_energy: parse_list(f(9), row, COLUMNS[9])?,
            cumulative_energy: parse_list(f(10), row, COLUMNS[10])?,
            cluster_budget: parse_list(f(11), row, COLUMNS[11])?,
            cluster_sync_time: if f(13).is_empty() { None } else { Some(parse_list(f(13), row, COLUMNS[13])?) },
            backhaul_bandwidth: parse_list(f(14), row, COLUMNS[14])?,
            active_edges: Adjacency::from_upper_bits(cluster_time.len(), f(15))?,
            cluster_time,
            global_time: parse_opt(f(16), row, COLUMNS[16])?,
            cumulative_time: parse_one(f(17), row, COLUMNS[17])?,
            consensus_bound: parse_opt(f(18), row, COLUMNS[18])?,
            upsilon_max: parse_opt(f(19), row, COLUMNS[19])?,
            consensus_average: parse_one(f(20), row, COLUMNS[20])?,
            max_staleness: parse_opt(f(21), row, COLUMNS[21])?,
            zeta: parse_opt(f(22), row, COLUMNS[22])?,
            train_loss: parse_opt(f(23), row, COLUMNS[23])?,
            test_accuracy: parse_opt(f(24), row, COLUMNS[24])?,
            test_loss: parse_opt(f(25), row, COLUMNS[25])?,
        });
    }
    Ok(out)
}
