//! C-MAPSS ingestion and a synthetic generator with the same schema.
//!
//! The NASA files are whitespace-separated text, one row per cycle:
//! `unit cycle setting1..3 sensor1..21`. Rows of one unit are contiguous.

use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_SETTINGS: usize = 3;
pub const N_SENSORS: usize = 21;
/// Raw feature count per frame (settings followed by sensors).
pub const N_FEATURES: usize = N_SETTINGS + N_SENSORS;
/// Column count of a C-MAPSS row, including unit id and cycle.
pub const N_COLUMNS: usize = N_FEATURES + 2;

/// Sensor descriptions, in column order.
pub const SENSOR_NAMES: [&str; N_SENSORS] = [
    "Total temperature at fan inlet",
    "Total temperature at LPC outlet",
    "Total temperature at HPC outlet",
    "Total temperature at LPT outlet",
    "Pressure at fan inlet",
    "Total pressure in bypass-duct",
    "Total pressure at HPC outlet",
    "Physical fan speed",
    "Physical core speed",
    "Engine pressure ratio (P50/P2)",
    "Static pressure at HPC outlet",
    "Ratio of fuel flow to Ps30",
    "Corrected fan speed",
    "Corrected core speed",
    "Bypass ratio",
    "Burner fuel-air ratio",
    "Bleed enthalpy",
    "Demanded fan speed",
    "Demanded corrected fan speed",
    "HPT coolant bleed",
    "LPT coolant bleed",
];

/// Name of raw feature `i` (0..24) for reports.
pub fn feature_name(i: usize) -> String {
    if i < N_SETTINGS {
        format!("setting{}", i + 1)
    } else {
        format!("sensor{} ({})", i - N_SETTINGS + 1, SENSOR_NAMES[i - N_SETTINGS])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub cycle: u32,
    pub settings: [f64; N_SETTINGS],
    pub sensors: [f64; N_SENSORS],
}

impl Frame {
    /// Settings and sensors concatenated, in file column order.
    pub fn features(&self) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        out[..N_SETTINGS].copy_from_slice(&self.settings);
        out[N_SETTINGS..].copy_from_slice(&self.sensors);
        out
    }
}

/// One engine's observed time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineTrajectory {
    pub unit_id: u32,
    pub frames: Vec<Frame>,
}

impl EngineTrajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Keeps the first `len` frames.
    pub fn truncated(&self, len: usize) -> EngineTrajectory {
        EngineTrajectory {
            unit_id: self.unit_id,
            frames: self.frames[..len.min(self.frames.len())].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubsetId {
    FD001,
    FD002,
    FD003,
    FD004,
    #[serde(rename = "SYNTH")]
    Synth,
}

impl SubsetId {
    pub const REAL: [SubsetId; 4] = [SubsetId::FD001, SubsetId::FD002, SubsetId::FD003, SubsetId::FD004];

    pub fn as_str(&self) -> &'static str {
        match self {
            SubsetId::FD001 => "FD001",
            SubsetId::FD002 => "FD002",
            SubsetId::FD003 => "FD003",
            SubsetId::FD004 => "FD004",
            SubsetId::Synth => "SYNTH",
        }
    }

    /// Published (train, test) engine counts; `None` for synthetic data.
    pub fn expected_counts(&self) -> Option<(usize, usize)> {
        match self {
            SubsetId::FD001 => Some((100, 100)),
            SubsetId::FD002 => Some((260, 259)),
            SubsetId::FD003 => Some((100, 100)),
            SubsetId::FD004 => Some((249, 248)),
            SubsetId::Synth => None,
        }
    }

    pub fn train_file(&self) -> String {
        format!("train_{}.txt", self.as_str())
    }

    pub fn test_file(&self) -> String {
        format!("test_{}.txt", self.as_str())
    }

    pub fn rul_file(&self) -> String {
        format!("RUL_{}.txt", self.as_str())
    }
}

impl fmt::Display for SubsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubsetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FD001" => Ok(SubsetId::FD001),
            "FD002" => Ok(SubsetId::FD002),
            "FD003" => Ok(SubsetId::FD003),
            "FD004" => Ok(SubsetId::FD004),
            "SYNTH" => Ok(SubsetId::Synth),
            other => Err(Error::Validation(format!("unknown subset id {other:?}"))),
        }
    }
}

/// Train/test split of one subset plus the ground-truth RUL of every test engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub subset_id: SubsetId,
    pub train: Vec<EngineTrajectory>,
    pub test: Vec<EngineTrajectory>,
    pub test_rul: Vec<u32>,
    /// Non-fatal integrity findings, e.g. engine counts that differ from the published ones.
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn parse_field(token: &str, line: usize, column: usize) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            line,
            column,
            message: format!("invalid number {token:?}"),
        }),
    }
}

fn parse_index(token: &str, line: usize, column: usize) -> Result<u32> {
    let value = parse_field(token, line, column)?;
    if value.fract() != 0.0 || value < 1.0 || value > u32::MAX as f64 {
        return Err(Error::Parse {
            line,
            column,
            message: format!("expected a positive integer, found {token:?}"),
        });
    }
    Ok(value as u32)
}

/// Parses a C-MAPSS trajectory file (train or test).
pub fn parse_trajectory_file<R: BufRead>(reader: R) -> Result<Vec<EngineTrajectory>> {
    let mut out: Vec<EngineTrajectory> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            column: 1,
            message: e.to_string(),
        })?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != N_COLUMNS {
            return Err(Error::MalformedRow {
                line: lineno,
                expected: N_COLUMNS,
                found: tokens.len(),
            });
        }
        let unit_id = parse_index(tokens[0], lineno, 1)?;
        let cycle = parse_index(tokens[1], lineno, 2)?;
        let mut values = [0.0; N_FEATURES];
        for (j, tok) in tokens[2..].iter().enumerate() {
            values[j] = parse_field(tok, lineno, j + 3)?;
        }
        let mut frame = Frame {
            cycle,
            settings: [0.0; N_SETTINGS],
            sensors: [0.0; N_SENSORS],
        };
        frame.settings.copy_from_slice(&values[..N_SETTINGS]);
        frame.sensors.copy_from_slice(&values[N_SETTINGS..]);

        match out.last_mut() {
            Some(traj) if traj.unit_id == unit_id => {
                let prev = traj.frames.last().map(|f| f.cycle).unwrap_or(0);
                if cycle != prev + 1 {
                    return Err(Error::Integrity(format!(
                        "unit {unit_id}: cycle {cycle} at line {lineno} does not follow cycle {prev}"
                    )));
                }
                traj.frames.push(frame);
            }
            _ => {
                if out.iter().any(|t| t.unit_id == unit_id) {
                    return Err(Error::Integrity(format!(
                        "unit {unit_id} reappears at line {lineno}; rows of a unit must be contiguous"
                    )));
                }
                if cycle != 1 {
                    return Err(Error::Integrity(format!(
                        "unit {unit_id} starts at cycle {cycle} (line {lineno}), expected 1"
                    )));
                }
                out.push(EngineTrajectory {
                    unit_id,
                    frames: vec![frame],
                });
            }
        }
    }
    Ok(out)
}

/// Parses a RUL ground-truth file: one non-negative integer per non-empty line.
pub fn parse_rul_file<R: BufRead>(reader: R) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            column: 1,
            message: e.to_string(),
        })?;
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        let value: u32 = token.parse().map_err(|_| Error::Parse {
            line: lineno,
            column: 1,
            message: format!("expected a non-negative integer, found {token:?}"),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Writes trajectories in the C-MAPSS text layout. Values use Rust's shortest
/// round-trip formatting, so `parse_trajectory_file` recovers them exactly.
pub fn write_trajectory_file<W: Write>(mut w: W, trajectories: &[EngineTrajectory]) -> std::io::Result<()> {
    for traj in trajectories {
        for frame in &traj.frames {
            write!(w, "{} {}", traj.unit_id, frame.cycle)?;
            for v in frame.features() {
                write!(w, " {v:?}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn write_rul_file<W: Write>(mut w: W, rul: &[u32]) -> std::io::Result<()> {
    for r in rul {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<std::io::BufReader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufReader::new(file))
}

/// Loads `train_<id>.txt`, `test_<id>.txt` and `RUL_<id>.txt` from `root`.
pub fn load_subset(root: &Path, subset: SubsetId) -> Result<DatasetBundle> {
    let train_path = root.join(subset.train_file());
    let test_path = root.join(subset.test_file());
    let rul_path = root.join(subset.rul_file());
    for p in [&train_path, &test_path, &rul_path] {
        if !p.is_file() {
            return Err(Error::NotFound(p.clone()));
        }
    }
    let train = parse_trajectory_file(read_file(&train_path)?)?;
    let test = parse_trajectory_file(read_file(&test_path)?)?;
    let test_rul = parse_rul_file(read_file(&rul_path)?)?;
    if test_rul.len() != test.len() {
        return Err(Error::Integrity(format!(
            "{} has {} entries but {} holds {} engines",
            rul_path.display(),
            test_rul.len(),
            test_path.display(),
            test.len()
        )));
    }
    let mut warnings = Vec::new();
    if let Some((n_train, n_test)) = subset.expected_counts() {
        if train.len() != n_train {
            warnings.push(format!("{subset}: expected {n_train} train engines, found {}", train.len()));
        }
        if test.len() != n_test {
            warnings.push(format!("{subset}: expected {n_test} test engines, found {}", test.len()));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(DatasetBundle {
        subset_id: subset,
        train,
        test,
        test_rul,
        warnings,
    })
}

/// Writes a bundle to `root` using the C-MAPSS file names for its subset id.
pub fn save_subset(root: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let write = |name: String, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
        let path = root.join(name);
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))
    };
    let id = bundle.subset_id;
    write(id.train_file(), &|b| write_trajectory_file(b, &bundle.train))?;
    write(id.test_file(), &|b| write_trajectory_file(b, &bundle.test))?;
    write(id.rul_file(), &|b| write_rul_file(b, &bundle.test_rul))?;
    Ok(())
}

/// Parameters of the synthetic run-to-failure generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub noise_std: f64,
    pub n_informative_sensors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 60,
            n_test: 20,
            min_len: 120,
            max_len: 260,
            noise_std: 0.05,
            n_informative_sensors: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(format!("SynthConfig: {m}")));
        if self.n_train == 0 || self.n_test == 0 {
            return fail("n_train and n_test must be positive");
        }
        if self.min_len < 40 {
            return fail("min_len must be at least 40");
        }
        if self.min_len > self.max_len {
            return fail("min_len must not exceed max_len");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail("noise_std must be a non-negative finite number");
        }
        if !(1..=N_SENSORS).contains(&self.n_informative_sensors) {
            return fail("n_informative_sensors must be in [1, 21]");
        }
        Ok(())
    }
}

/// Sensors held exactly constant by the generator (0-based sensor indices).
/// Mirrors the flat channels of the single-condition NASA subsets.
pub const SYNTH_CONSTANT_SENSORS: [usize; 4] = [0, 4, 9, 15];

#[derive(Clone, Copy)]
enum SensorKind {
    Degrading { base: f64, amplitude: f64 },
    Constant(f64),
    Noise { base: f64 },
}

/// Sensor roles: the first `n_informative` non-constant sensors degrade,
/// the fixed constant set stays flat, the rest are pure noise.
fn sensor_layout(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<SensorKind> {
    let mut informative_left = cfg.n_informative_sensors;
    (0..N_SENSORS)
        .map(|s| {
            // Constant sensors yield to informative ones when the caller asks for almost all 21.
            let free = N_SENSORS - s;
            if SYNTH_CONSTANT_SENSORS.contains(&s) && informative_left < free {
                SensorKind::Constant(100.0 + 10.0 * s as f64)
            } else if informative_left > 0 {
                informative_left -= 1;
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                SensorKind::Degrading {
                    base: rng.gen_range(10.0..1000.0),
                    amplitude: sign * rng.gen_range(0.5..2.0),
                }
            } else {
                SensorKind::Noise {
                    base: rng.gen_range(10.0..1000.0),
                }
            }
        })
        .collect()
}

/// Generates one run-to-failure trajectory of length `len`.
fn synth_trajectory(
    unit_id: u32,
    len: usize,
    layout: &[SensorKind],
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> EngineTrajectory {
    // Degradation becomes visible `onset` cycles before failure and grows convexly.
    let onset: f64 = rng.gen_range(120.0..160.0);
    let wear: f64 = rng.gen_range(-0.05..0.05);
    let frames = (1..=len)
        .map(|cycle| {
            let remaining = (len - cycle) as f64;
            let health = (1.0 - remaining / onset).max(0.0).powf(1.5);
            let mut settings = [0.0; N_SETTINGS];
            for (i, s) in settings.iter_mut().enumerate() {
                *s = 0.001 * (i as f64 + 1.0) * noise.sample(rng);
            }
            let mut sensors = [0.0; N_SENSORS];
            for (s, kind) in sensors.iter_mut().zip(layout) {
                *s = match *kind {
                    SensorKind::Degrading { base, amplitude } => {
                        base + amplitude * (health + wear) + noise.sample(rng)
                    }
                    SensorKind::Constant(v) => v,
                    SensorKind::Noise { base } => base + noise.sample(rng),
                };
            }
            Frame {
                cycle: cycle as u32,
                settings,
                sensors,
            }
        })
        .collect();
    EngineTrajectory { unit_id, frames }
}

/// Deterministic CMAPSS-schema data: run-to-failure training engines and
/// truncated test engines whose withheld tail length is the test RUL.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = sensor_layout(cfg, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Validation(e.to_string()))?;

    let train = (1..=cfg.n_train as u32)
        .map(|unit| {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            synth_trajectory(unit, len, &layout, &noise, &mut rng)
        })
        .collect();

    let mut test = Vec::with_capacity(cfg.n_test);
    let mut test_rul = Vec::with_capacity(cfg.n_test);
    for unit in 1..=cfg.n_test as u32 {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let full = synth_trajectory(unit, len, &layout, &noise, &mut rng);
        let observed = rng.gen_range(30.min(len)..=len);
        test.push(full.truncated(observed));
        test_rul.push((len - observed) as u32);
    }

    Ok(DatasetBundle {
        subset_id: SubsetId::Synth,
        train,
        test,
        test_rul,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(unit: u32, cycle: u32) -> String {
        let vals: Vec<String> = (0..N_FEATURES).map(|i| format!("{}.5", i)).collect();
        format!("{unit} {cycle} {}", vals.join(" "))
    }

    #[test]
    fn parses_minimal_file() {
        let text = format!("{}\n{}\n", row(1, 1), row(1, 2));
        let trajs = parse_trajectory_file(text.as_bytes()).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].unit_id, 1);
        assert_eq!(trajs[0].len(), 2);
        assert_eq!(trajs[0].frames[1].sensors[20], 23.5);
    }

    #[test]
    fn tolerates_trailing_blanks_and_empty_lines() {
        let text = format!("{}  \n\n{}   \n\n", row(3, 1), row(3, 2).replace(' ', "  "));
        let trajs = parse_trajectory_file(text.as_bytes()).unwrap();
        assert_eq!(trajs[0].len(), 2);
    }

    #[test]
    fn short_row_reports_line() {
        let mut lines: Vec<String> = (1..=6).map(|c| row(1, c)).collect();
        let mut bad = row(1, 7);
        bad.truncate(bad.rfind(' ').unwrap());
        lines.push(bad);
        let err = parse_trajectory_file(lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 7, found: 25, .. }), "{err}");
    }

    #[test]
    fn non_numeric_token_reports_column() {
        let text = row(1, 1).replacen("4.5", "abc", 1);
        let err = parse_trajectory_file(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 7, .. }), "{err}");
    }

    #[test]
    fn cycle_gap_is_integrity_error() {
        let text = format!("{}\n{}\n", row(1, 1), row(1, 3));
        assert!(matches!(parse_trajectory_file(text.as_bytes()), Err(Error::Integrity(_))));
    }

    #[test]
    fn rul_file() {
        assert_eq!(parse_rul_file("112\n98\n".as_bytes()).unwrap(), vec![112, 98]);
        assert_eq!(parse_rul_file("7 \n\n0\n".as_bytes()).unwrap(), vec![7, 0]);
        assert!(matches!(parse_rul_file("-3\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_rul_file("4\n2.5\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn synth_config_validation() {
        let mut cfg = SynthConfig::default();
        cfg.min_len = 39;
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig {
            n_informative_sensors: 22,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn synth_layout_has_constant_sensors() {
        let bundle = generate_synthetic(&SynthConfig::default()).unwrap();
        let t = &bundle.train[0];
        for &s in &SYNTH_CONSTANT_SENSORS {
            assert!(t.frames.iter().all(|f| f.sensors[s] == t.frames[0].sensors[s]));
        }
    }

    #[test]
    fn subset_parsing() {
        assert_eq!("fd002".parse::<SubsetId>().unwrap(), SubsetId::FD002);
        assert!("FD005".parse::<SubsetId>().is_err());
        assert_eq!(SubsetId::FD004.expected_counts(), Some((249, 248)));
    }
}
