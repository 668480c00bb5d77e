//! On-disk formats: run JSONL, summaries, CSV reports and the binary policy file.
//!
//! Every float is written with 17 significant digits so that reading a
//! file back reproduces the exact bits.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::agent::UpdateMetrics;
use crate::bench::{diag_windows, CurvePoint, RunRecord, SaturationReport};
use crate::diffmath::{Activation, Linear, MlpParams, OutputMode, PenultMode};
use crate::{Error, Result};

/// Schema version of every JSONL, JSON and CSV file written here.
pub const FORMAT_VERSION: u32 = 1;
pub const POLICY_MAGIC: &[u8; 8] = b"VARLABPL";
pub const POLICY_VERSION: u32 = 1;

/// JSON formatter writing `f64` as `d.dddddddddddddddde±x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Float17;

impl serde_json::ser::Formatter for Float17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes to compact JSON with [`Float17`] floats.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Float17);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("json is utf-8"))
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One line of a run JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunLine {
    Eval { version: u32, step: u64, eval_mean: f64, scores: Vec<f64> },
    Diag { version: u32, #[serde(flatten)] metrics: UpdateMetrics },
}

impl RunLine {
    fn version(&self) -> u32 {
        match self {
            RunLine::Eval { version, .. } | RunLine::Diag { version, .. } => *version,
        }
    }
}

pub fn jsonl_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("run_{seed}.jsonl"))
}

pub fn summary_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("run_{seed}.summary.json"))
}

pub fn policy_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("run_{seed}.policy.bin"))
}

/// Evaluation points and diagnostic windows, ordered by step (a window
/// precedes the evaluation that closes it).
pub fn run_lines(record: &RunRecord, eval_every: u64) -> Vec<RunLine> {
    let mut lines: Vec<(u64, u8, RunLine)> = Vec::new();
    for (p, scores) in record.curve.iter().zip(&record.eval_scores) {
        lines.push((p.step, 1, RunLine::Eval { version: FORMAT_VERSION, step: p.step, eval_mean: p.eval_mean, scores: scores.clone() }));
    }
    for w in diag_windows(&record.diag, eval_every) {
        lines.push((w.step, 0, RunLine::Diag { version: FORMAT_VERSION, metrics: w }));
    }
    lines.sort_by_key(|(step, order, _)| (*step, *order));
    lines.into_iter().map(|(_, _, l)| l).collect()
}

pub fn write_jsonl(path: &Path, record: &RunRecord, eval_every: u64) -> Result<()> {
    let mut out = String::new();
    for line in run_lines(record, eval_every) {
        out.push_str(&to_json(&line)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// A run as recovered from disk. Diagnostics are the windowed averages.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedRun {
    pub curve: Vec<CurvePoint>,
    pub eval_scores: Vec<Vec<f64>>,
    pub windows: Vec<UpdateMetrics>,
}

impl LoadedRun {
    pub fn final_score(&self) -> f64 {
        self.curve.last().map_or(0.0, |p| p.eval_mean)
    }
}

pub fn read_jsonl(path: &Path) -> Result<LoadedRun> {
    let text = fs::read_to_string(path)?;
    let mut run = LoadedRun { curve: Vec::new(), eval_scores: Vec::new(), windows: Vec::new() };
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: RunLine = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if parsed.version() != FORMAT_VERSION {
            return Err(Error::Format(format!("{}:{}: unsupported version {}", path.display(), i + 1, parsed.version())));
        }
        match parsed {
            RunLine::Eval { step, eval_mean, scores, .. } => {
                run.curve.push(CurvePoint { step, eval_mean });
                run.eval_scores.push(scores);
            }
            RunLine::Diag { metrics, .. } => run.windows.push(metrics),
        }
    }
    Ok(run)
}

/// Per-run metadata next to the JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: u32,
    pub seed: u64,
    pub label: String,
    pub env: String,
    pub config_hash: String,
    pub final_score: f64,
    pub eval_points: usize,
    pub updates: usize,
    pub failed: Option<String>,
    pub saturation: SaturationReport,
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut text = to_json(summary)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let s: RunSummary = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if s.version != FORMAT_VERSION {
        return Err(Error::Format(format!("{}: unsupported version {}", path.display(), s.version)));
    }
    Ok(s)
}

/// CSV text with a leading `#version=N` line.
pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut out = format!("#version={FORMAT_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    Ok(out)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

/// Reads a versioned CSV into its header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    if first != format!("#version={FORMAT_VERSION}") {
        return Err(Error::Format(format!("{}: missing or unsupported version line {first:?}", path.display())));
    }
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r.records().map(|rec| Ok(rec?.iter().map(String::from).collect())).collect::<Result<_>>()?;
    Ok((header, rows))
}

fn penult_code(m: PenultMode) -> u8 {
    match m {
        PenultMode::None => 0,
        PenultMode::Pnorm => 1,
        PenultMode::LayerNorm => 2,
        PenultMode::Spectral => 3,
    }
}

/// Binary layout: magic, version (u32), hidden activation, penultimate mode,
/// output mode (one byte each), layer count (u32), `(out, in)` per layer
/// (u32 pairs), then per layer the row-major weight and the bias, then the
/// power-iteration vector if the penultimate mode is spectral. Integers and
/// floats are little-endian.
pub fn policy_to_bytes(p: &MlpParams) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(POLICY_MAGIC);
    b.extend_from_slice(&POLICY_VERSION.to_le_bytes());
    b.push(match p.hidden_activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    });
    b.push(penult_code(p.penult_mode()));
    b.push(match p.output_mode {
        OutputMode::Identity => 0,
        OutputMode::OutputNorm => 1,
    });
    b.extend_from_slice(&(p.layers().len() as u32).to_le_bytes());
    for l in p.layers() {
        b.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
        b.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
    }
    let mut floats = |xs: &mut dyn Iterator<Item = f64>| xs.for_each(|x| b.extend_from_slice(&x.to_le_bytes()));
    for l in p.layers() {
        floats(&mut l.weight.iter().copied());
        floats(&mut l.bias.iter().copied());
    }
    if let Some(v) = p.power_vec() {
        floats(&mut v.iter().copied());
    }
    b
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("policy file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn policy_from_bytes(bytes: &[u8]) -> Result<MlpParams> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != POLICY_MAGIC {
        return Err(Error::Format("not a policy file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != POLICY_VERSION {
        return Err(Error::Format(format!("unsupported policy version {version}, expected {POLICY_VERSION}")));
    }
    let act = match c.u8()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        x => return Err(Error::Format(format!("unknown activation code {x}"))),
    };
    let penult = match c.u8()? {
        0 => PenultMode::None,
        1 => PenultMode::Pnorm,
        2 => PenultMode::LayerNorm,
        3 => PenultMode::Spectral,
        x => return Err(Error::Format(format!("unknown penultimate mode code {x}"))),
    };
    let output = match c.u8()? {
        0 => OutputMode::Identity,
        1 => OutputMode::OutputNorm,
        x => return Err(Error::Format(format!("unknown output mode code {x}"))),
    };
    let n = c.u32()? as usize;
    let dims = (0..n).map(|_| Ok((c.u32()? as usize, c.u32()? as usize))).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(n);
    for &(out, inp) in &dims {
        let weight = Array2::from_shape_vec((out, inp), c.f64s(out * inp)?).map_err(|e| Error::Format(e.to_string()))?;
        let bias = Array1::from(c.f64s(out)?);
        layers.push(Linear { weight, bias });
    }
    let mut p = MlpParams::from_layers(layers, act, penult, output)?;
    if penult == PenultMode::Spectral {
        let len = p.layers()[p.layers().len() - 2].in_dim();
        p.set_power_vec(Array1::from(c.f64s(len)?))?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes in policy file", bytes.len() - c.pos)));
    }
    Ok(p)
}

pub fn write_policy(path: &Path, p: &MlpParams) -> Result<()> {
    write_atomic(path, &policy_to_bytes(p))
}

pub fn read_policy(path: &Path) -> Result<MlpParams> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    policy_from_bytes(&bytes)
}
