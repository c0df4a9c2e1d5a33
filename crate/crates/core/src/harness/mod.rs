//! Run configuration, result records, and the batch runner behind the
//! command-line tool.

pub mod corpus;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::baseline::{enumerate_count, BaselineCount};
use crate::counter::{pact_count, CountParams, CounterError, CounterStats, LogBase, RefineFailure, Refinement};
use crate::hashgen::HashFamily;
use crate::oracle::{Oracle, OracleError, QueryStats, SolverConfig, SubprocessOracle, DEFAULT_SOLVER_CMD};
use crate::parallel;
use crate::smtlib::{parse_declarations, parse_projection_file, resolve_projection, ProjectionSet, SmtError, SmtScript};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Smt(#[from] SmtError),
    #[error("no projection given and the script has no `; projected-vars:` comment")]
    NoProjection,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Counter(#[from] CounterError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Count,
    Baseline,
    Bench,
}

/// Where the projection variables come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum ProjectionSource {
    Names(Vec<String>),
    File(PathBuf),
    /// The script's own `; projected-vars:` comment.
    Hint,
}

impl ProjectionSource {
    /// `@path` names a file; anything else is a comma or space separated
    /// list of names.
    pub fn parse(arg: &str) -> Self {
        match arg.strip_prefix('@') {
            Some(path) => ProjectionSource::File(PathBuf::from(path)),
            None => ProjectionSource::Names(
                arg.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub inputs: Vec<PathBuf>,
    pub projection: ProjectionSource,
    pub epsilon: f64,
    pub delta: f64,
    pub family: HashFamily,
    pub seed: u64,
    pub solver_cmd: String,
    pub timeout_secs: f64,
    pub out: Option<PathBuf>,
    pub log_base: LogBase,
    pub refinement: Refinement,
    pub on_refine_failure: RefineFailure,
    /// Concurrent instances in bench mode; 0 uses every core.
    pub jobs: usize,
    /// Stop baseline enumeration after this many models.
    pub cap: Option<u64>,
    pub transcript: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Count,
            inputs: Vec::new(),
            projection: ProjectionSource::Hint,
            epsilon: 0.8,
            delta: 0.2,
            family: HashFamily::Xor,
            seed: 0,
            solver_cmd: DEFAULT_SOLVER_CMD.to_string(),
            timeout_secs: 3600.0,
            out: None,
            log_base: LogBase::Two,
            refinement: Refinement::Decrement,
            on_refine_failure: RefineFailure::Coarsest,
            jobs: 1,
            cap: None,
            transcript: None,
        }
    }
}

impl RunConfig {
    pub fn timeout(&self) -> Duration {
        Duration::try_from_secs_f64(self.timeout_secs).unwrap_or(Duration::MAX)
    }

    pub fn count_params(&self) -> CountParams {
        CountParams {
            log_base: self.log_base,
            refinement: self.refinement,
            on_refine_failure: self.on_refine_failure,
            timeout: Some(self.timeout()),
            ..CountParams::new(self.epsilon, self.delta, self.family)
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            transcript: self.transcript.clone(),
            ..SolverConfig::new(self.solver_cmd.clone())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Timeout,
    Error,
}

/// One run of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub instance: String,
    pub mode: Mode,
    /// Approximate count (count mode).
    #[serde(with = "big_number", default)]
    pub estimate: Option<BigUint>,
    /// Exact count (baseline mode, finished).
    pub count: Option<u64>,
    /// Models found before a baseline run stopped early.
    pub lower_bound: Option<u64>,
    /// Count mode: the formula had fewer than `thresh` models.
    pub exact: Option<bool>,
    pub status: Status,
    pub error: Option<String>,
    pub stats: QueryStats,
    pub wall_time_secs: f64,
    pub seed: u64,
    pub counter: Option<CounterStats>,
    /// From the script's `; expected-count:` comment.
    pub expected_count: Option<u64>,
    pub config: RunConfig,
}

impl ResultRecord {
    fn empty(instance: &str, mode: Mode, config: &RunConfig) -> Self {
        ResultRecord {
            instance: instance.to_string(),
            mode,
            estimate: None,
            count: None,
            lower_bound: None,
            exact: None,
            status: Status::Ok,
            error: None,
            stats: QueryStats::default(),
            wall_time_secs: 0.0,
            seed: config.seed,
            counter: None,
            expected_count: None,
            config: config.clone(),
        }
    }

    pub fn error(instance: &str, mode: Mode, config: &RunConfig, err: impl ToString) -> Self {
        ResultRecord {
            status: Status::Error,
            error: Some(err.to_string()),
            ..Self::empty(instance, mode, config)
        }
    }

    pub fn with_timing_cleared(mut self) -> Self {
        self.wall_time_secs = 0.0;
        self.stats.solver_time_secs = 0.0;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }

    /// The count this record reports, approximate or exact.
    pub fn reported(&self) -> Option<BigUint> {
        self.estimate.clone().or(self.count.map(BigUint::from))
    }
}

/// Counts as JSON numbers when they fit in 64 bits, decimal strings
/// otherwise.
mod big_number {
    use std::fmt;

    use num_bigint::BigUint;
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<BigUint>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            None => s.serialize_none(),
            Some(v) => match u64::try_from(v) {
                Ok(small) => s.serialize_u64(small),
                Err(_) => s.serialize_str(&v.to_string()),
            },
        }
    }

    struct Big;

    impl<'de> Visitor<'de> for Big {
        type Value = Option<BigUint>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a non-negative integer, a decimal string, or null")
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
            Ok(Some(v.into()))
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
            v.parse().map(Some).map_err(E::custom)
        }

        fn visit_unit<E: de::Error>(self) -> Result<Self::Value, E> {
            Ok(None)
        }

        fn visit_none<E: de::Error>(self) -> Result<Self::Value, E> {
            Ok(None)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BigUint>, D::Error> {
        d.deserialize_any(Big)
    }
}

/// A parsed input with its resolved projection.
#[derive(Debug, Clone)]
pub struct LoadedInstance {
    pub id: String,
    pub script: SmtScript,
    pub projection: ProjectionSet,
    pub expected_count: Option<u64>,
}

/// Reads `path` and resolves the projection. Explicit names or a file take
/// precedence over the script's comment.
pub fn load_instance(path: &Path, source: &ProjectionSource) -> Result<LoadedInstance, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let script = parse_declarations(&text)?;
    let names = match source {
        ProjectionSource::Names(names) if !names.is_empty() => names.clone(),
        ProjectionSource::File(file) => parse_projection_file(&fs::read_to_string(file).map_err(io_err(file))?),
        _ => script.projection_hint().ok_or(HarnessError::NoProjection)?.to_vec(),
    };
    let projection = resolve_projection(&script, &names)?;
    Ok(LoadedInstance {
        id: instance_id(path),
        expected_count: expected_count(&text),
        script,
        projection,
    })
}

fn instance_id(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn expected_count(text: &str) -> Option<u64> {
    text.lines()
        .filter_map(|l| l.trim_start().strip_prefix(';'))
        .find_map(|l| l.trim().strip_prefix("expected-count:"))
        .and_then(|v| v.trim().parse().ok())
}

fn status_of(err: &CounterError) -> Status {
    match err {
        CounterError::Timeout => Status::Timeout,
        _ => Status::Error,
    }
}

/// Runs the approximate counter on an open oracle.
pub fn count_with<O: Oracle + ?Sized>(instance: &str, oracle: &mut O, config: &RunConfig) -> ResultRecord {
    let start = Instant::now();
    let mut record = ResultRecord::empty(instance, Mode::Count, config);
    match pact_count(oracle, &config.count_params(), config.seed) {
        Ok(r) => {
            record.estimate = Some(r.estimate);
            record.exact = Some(r.exact);
            record.counter = Some(r.counter);
        }
        Err(e) => {
            record.status = status_of(&e);
            record.error = Some(e.to_string());
        }
    }
    record.stats = oracle.stats().clone();
    record.wall_time_secs = start.elapsed().as_secs_f64();
    record
}

/// Runs the enumeration baseline on an open oracle.
pub fn baseline_with<O: Oracle + ?Sized>(instance: &str, oracle: &mut O, config: &RunConfig) -> ResultRecord {
    let start = Instant::now();
    let mut record = ResultRecord::empty(instance, Mode::Baseline, config);
    match enumerate_count(oracle, Some(config.timeout()), config.cap) {
        Ok(r) => match r.count {
            BaselineCount::Exact(n) => record.count = Some(n),
            BaselineCount::TimedOut(n) => {
                record.status = Status::Timeout;
                record.lower_bound = Some(n);
            }
            BaselineCount::AtLeast(n) => record.lower_bound = Some(n),
        },
        Err(e) => {
            record.status = status_of(&e);
            record.error = Some(e.to_string());
        }
    }
    record.stats = oracle.stats().clone();
    record.wall_time_secs = start.elapsed().as_secs_f64();
    record
}

/// Runs `mode` (count or baseline) on one file through an external solver.
pub fn run_file(path: &Path, mode: Mode, config: &RunConfig) -> ResultRecord {
    let id = instance_id(path);
    let loaded = match load_instance(path, &config.projection) {
        Ok(l) => l,
        Err(e) => return ResultRecord::error(&id, mode, config, e),
    };
    let mut oracle = match SubprocessOracle::open(config.solver(), &loaded.script, loaded.projection) {
        Ok(o) => o,
        Err(e) => return ResultRecord::error(&id, mode, config, e),
    };
    let mut record = match mode {
        Mode::Baseline => baseline_with(&id, &mut oracle, config),
        _ => count_with(&id, &mut oracle, config),
    };
    record.expected_count = loaded.expected_count;
    record
}

pub fn run_count(config: &RunConfig) -> ResultRecord {
    run_first_input(Mode::Count, config)
}

pub fn run_baseline(config: &RunConfig) -> ResultRecord {
    run_first_input(Mode::Baseline, config)
}

fn run_first_input(mode: Mode, config: &RunConfig) -> ResultRecord {
    match config.inputs.first() {
        Some(path) => run_file(path, mode, config),
        None => ResultRecord::error("", mode, config, "no input file"),
    }
}

/// `max(b/s, s/b) - 1`; zero iff the two agree, infinite if exactly one is
/// zero.
pub fn error_metric(exact: f64, estimate: f64) -> f64 {
    if exact == estimate {
        return 0.0;
    }
    if exact <= 0.0 || estimate <= 0.0 {
        return f64::INFINITY;
    }
    (exact / estimate).max(estimate / exact) - 1.0
}

fn big_to_f64(v: &BigUint) -> f64 {
    num_traits::ToPrimitive::to_f64(v).unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CactusRow {
    pub mode: Mode,
    pub solved: usize,
    pub time_secs: f64,
}

/// For each mode, the finished runs sorted by time; row `k` of a mode says
/// `k` instances were solved within `time_secs` each.
pub fn cactus_rows(records: &[ResultRecord]) -> Vec<CactusRow> {
    let mut rows = Vec::new();
    for mode in [Mode::Count, Mode::Baseline] {
        let mut times: Vec<f64> = records
            .iter()
            .filter(|r| r.mode == mode && r.status == Status::Ok && r.reported().is_some())
            .map(|r| r.wall_time_secs)
            .collect();
        times.sort_by(f64::total_cmp);
        rows.extend(times.into_iter().enumerate().map(|(i, t)| CactusRow {
            mode,
            solved: i + 1,
            time_secs: t,
        }));
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub instance: String,
    pub exact: u64,
    pub estimate: String,
    pub error: f64,
}

/// One row per finished count run whose exact count is known, from a
/// finished baseline run of the same instance or else the script comment.
pub fn accuracy_rows(records: &[ResultRecord]) -> Vec<AccuracyRow> {
    records
        .iter()
        .filter(|r| r.mode == Mode::Count && r.status == Status::Ok)
        .filter_map(|r| {
            let estimate = r.estimate.as_ref()?;
            let exact = records
                .iter()
                .find(|b| b.mode == Mode::Baseline && b.instance == r.instance && b.status == Status::Ok)
                .and_then(|b| b.count)
                .or(r.expected_count)?;
            Some(AccuracyRow {
                instance: r.instance.clone(),
                exact,
                estimate: estimate.to_string(),
                error: error_metric(exact as f64, big_to_f64(estimate)),
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub records: Vec<ResultRecord>,
    pub cactus: Vec<CactusRow>,
    pub accuracy: Vec<AccuracyRow>,
}

/// Runs every `(item, mode)` pair with `run`, up to `config.jobs` at a
/// time. Each finished record is appended to `sink` as one JSON line.
pub fn run_bench_with<T, F>(
    config: &RunConfig,
    items: &[T],
    modes: &[Mode],
    sink: Option<&Mutex<dyn Write + Send>>,
    run: F,
) -> BenchReport
where
    T: Sync,
    F: Fn(&T, Mode) -> ResultRecord + Sync + Send,
{
    let jobs: Vec<(&T, Mode)> = items.iter().flat_map(|it| modes.iter().map(move |&m| (it, m))).collect();
    let records = parallel::map_with_threads(config.jobs, jobs, |(item, mode)| {
        let record = run(item, mode);
        if let Some(sink) = sink {
            let mut w = sink.lock().unwrap_or_else(|p| p.into_inner());
            // A failed append must not abort the other runs.
            let _ = writeln!(w, "{}", record.to_json());
        }
        record
    });
    BenchReport {
        cactus: cactus_rows(&records),
        accuracy: accuracy_rows(&records),
        records,
    }
}

/// Reads an instance list (one path per line, relative to the list file,
/// `#` comments allowed).
pub fn read_instance_list(path: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect())
}

/// Baseline and count on every listed instance through the external
/// solver. With `config.out` set, writes `records.jsonl`, `cactus.csv` and
/// `accuracy.csv` into that directory.
pub fn run_bench(config: &RunConfig) -> Result<BenchReport, HarnessError> {
    let list = config.inputs.first().ok_or_else(|| HarnessError::Io {
        path: PathBuf::new(),
        source: io::Error::new(io::ErrorKind::NotFound, "no instance list given"),
    })?;
    let paths = read_instance_list(list)?;
    let modes = [Mode::Baseline, Mode::Count];
    let report = match &config.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("records.jsonl");
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            let sink = Mutex::new(io::BufWriter::new(file));
            let report = run_bench_with(config, &paths, &modes, Some(&sink), |p, m| run_file(p, m, config));
            sink.into_inner()
                .unwrap_or_else(|p| p.into_inner())
                .flush()
                .map_err(io_err(&path))?;
            let cactus = dir.join("cactus.csv");
            write_csv(&report.cactus, fs::File::create(&cactus).map_err(io_err(&cactus))?)?;
            let accuracy = dir.join("accuracy.csv");
            write_csv(&report.accuracy, fs::File::create(&accuracy).map_err(io_err(&accuracy))?)?;
            report
        }
        None => run_bench_with(config, &paths, &modes, None, |p, m| run_file(p, m, config)),
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::MemoryOracle;

    #[test]
    fn error_metric_examples() {
        assert!((error_metric(100.0, 103.0) - 0.03).abs() < 1e-12);
        assert_eq!(error_metric(100.0, 50.0), 1.0);
        assert_eq!(error_metric(50.0, 100.0), 1.0);
        assert_eq!(error_metric(7.0, 7.0), 0.0);
        assert_eq!(error_metric(0.0, 0.0), 0.0);
        assert!(error_metric(0.0, 3.0).is_infinite());
    }

    #[test]
    fn projection_source_parsing() {
        assert_eq!(ProjectionSource::parse("x"), ProjectionSource::Names(vec!["x".into()]));
        assert_eq!(
            ProjectionSource::parse("x, y z"),
            ProjectionSource::Names(vec!["x".into(), "y".into(), "z".into()])
        );
        assert_eq!(ProjectionSource::parse("@vars.txt"), ProjectionSource::File("vars.txt".into()));
    }

    #[test]
    fn expected_count_comment() {
        assert_eq!(expected_count("; projected-vars: x\n; expected-count: 20\n(check-sat)"), Some(20));
        assert_eq!(expected_count("(check-sat)"), None);
    }

    fn memory_record(seed: u64) -> ResultRecord {
        let mut o = MemoryOracle::from_packed(ProjectionSet::single("x", 12).unwrap(), (0..1500).map(|v| v * 2)).unwrap();
        let config = RunConfig {
            seed,
            ..RunConfig::default()
        };
        count_with("mem", &mut o, &config)
    }

    #[test]
    fn record_round_trips() {
        let r = memory_record(4);
        assert_eq!(r.status, Status::Ok);
        let back: ResultRecord = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);

        let mut huge = ResultRecord::error("h", Mode::Count, &RunConfig::default(), "boom");
        huge.estimate = Some(BigUint::from(1u32) << 100);
        let json = huge.to_json();
        assert!(json.contains("\"1267650600228229401496703205376\""));
        assert_eq!(serde_json::from_str::<ResultRecord>(&json).unwrap(), huge);
    }

    #[test]
    fn records_are_deterministic() {
        assert_eq!(
            memory_record(8).with_timing_cleared().to_json(),
            memory_record(8).with_timing_cleared().to_json()
        );
    }

    #[test]
    fn early_exit_record_shape() {
        let mut o = MemoryOracle::from_packed(ProjectionSet::single("x", 4).unwrap(), 0..5).unwrap();
        let r = count_with("five", &mut o, &RunConfig::default());
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["estimate"], 5);
        assert_eq!(v["status"], "ok");
        let r = baseline_with("five", &mut o, &RunConfig::default());
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["count"], 5);
    }

    #[test]
    fn cactus_and_accuracy() {
        let config = RunConfig::default();
        let mut records = Vec::new();
        for (i, (b, s, t)) in [(100u64, 103u64, 3.0), (200, 100, 1.0), (50, 50, 2.0)].into_iter().enumerate() {
            let mut base = ResultRecord::empty(&format!("i{i}"), Mode::Baseline, &config);
            base.count = Some(b);
            base.wall_time_secs = t * 10.0;
            let mut count = ResultRecord::empty(&format!("i{i}"), Mode::Count, &config);
            count.estimate = Some(s.into());
            count.wall_time_secs = t;
            records.push(base);
            records.push(count);
        }
        records.push(ResultRecord::error("bad", Mode::Count, &config, "x"));
        let cactus = cactus_rows(&records);
        let counts: Vec<_> = cactus.iter().filter(|r| r.mode == Mode::Count).collect();
        assert_eq!(counts.iter().map(|r| r.time_secs).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
        assert!(cactus.iter().filter(|r| r.mode == Mode::Count).enumerate().all(|(i, r)| r.solved == i + 1));
        let acc = accuracy_rows(&records);
        assert_eq!(acc.len(), 3);
        assert!((acc[0].error - 0.03).abs() < 1e-12);
        assert_eq!(acc[1].error, 1.0);
        assert_eq!(acc[2].error, 0.0);

        let mut buf = Vec::new();
        write_csv(&acc, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("instance,exact,estimate,error"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn bench_over_memory_corpus() {
        let corpus = corpus::generate_corpus(20, 14, 10, 400, 1);
        let config = RunConfig {
            jobs: 4,
            ..RunConfig::default()
        };
        let sink: Mutex<Vec<u8>> = Mutex::new(Vec::new());
        let report = run_bench_with(&config, &corpus, &[Mode::Baseline, Mode::Count], Some(&sink), |inst, mode| {
            let mut o = inst.oracle();
            match mode {
                Mode::Baseline => baseline_with(&inst.name, &mut o, &config),
                _ => count_with(&inst.name, &mut o, &config),
            }
        });
        assert_eq!(report.records.len(), 40);
        assert_eq!(report.accuracy.len(), 20);
        let lines = sink.into_inner().unwrap();
        assert_eq!(String::from_utf8(lines).unwrap().lines().count(), 40);
        for mode in [Mode::Count, Mode::Baseline] {
            let times: Vec<f64> = report.cactus.iter().filter(|r| r.mode == mode).map(|r| r.time_secs).collect();
            assert_eq!(times.len(), 20);
            assert!(times.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
