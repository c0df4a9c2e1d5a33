use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use num_bigint::BigUint;

use super::{Oracle, OracleError, ProjectedModel, QueryStats, SatResult};
use crate::sexpr::{self, SExpr};
use crate::smtlib::{render_assertion, Assertion, ProjectionSet, SmtScript};

pub const DEFAULT_SOLVER_CMD: &str = "cvc5 --incremental --produce-models";
/// Environment variable that overrides the solver command line.
pub const SOLVER_ENV: &str = "PACT_SOLVER_CMD";

/// Bound on answers to anything but `check-sat`; the query timeout covers
/// only satisfiability checks.
const COMMAND_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub command: String,
    pub query_timeout: Option<Duration>,
    /// Every command and response is appended here when set.
    pub transcript: Option<PathBuf>,
}

impl SolverConfig {
    pub fn new(command: impl Into<String>) -> Self {
        SolverConfig {
            command: command.into(),
            query_timeout: None,
            transcript: None,
        }
    }

    /// `$PACT_SOLVER_CMD` if set, else the default cvc5 command line.
    pub fn from_env() -> Self {
        Self::new(std::env::var(SOLVER_ENV).unwrap_or_else(|_| DEFAULT_SOLVER_CMD.to_string()))
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::from_env()
    }
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    stderr: Arc<Mutex<String>>,
}

impl Session {
    fn spawn(command: &str) -> Result<Session, OracleError> {
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| OracleError::Protocol(format!("cannot parse solver command `{command}`")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| OracleError::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut err_pipe = child.stderr.take().expect("piped stderr");

        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = err_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                sink.lock().unwrap().push_str(&String::from_utf8_lossy(&buf[..n]));
            }
        });
        Ok(Session {
            child,
            stdin,
            lines,
            stderr,
        })
    }

    fn crashed(&mut self) -> OracleError {
        // Give the stderr reader a moment to drain.
        let _ = self.child.wait_timeout_ms(200);
        OracleError::SolverCrashed {
            stderr: self.stderr.lock().unwrap().trim().to_string(),
        }
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

trait WaitTimeout {
    fn wait_timeout_ms(&mut self, ms: u64) -> std::io::Result<()>;
}

impl WaitTimeout for Child {
    fn wait_timeout_ms(&mut self, ms: u64) -> std::io::Result<()> {
        let deadline = Instant::now() + Duration::from_millis(ms);
        while Instant::now() < deadline {
            if self.try_wait()?.is_some() {
                break;
            }
            thread::sleep(Duration::from_millis(5));
        }
        Ok(())
    }
}

enum Reply {
    Text(String),
    TimedOut,
}

/// Oracle backed by an external SMT-LIB2 solver in incremental mode.
///
/// One process serves the whole counting run. Everything sent after the
/// input prelude is logged per push frame so the state can be replayed
/// into a fresh process after a query timeout.
pub struct SubprocessOracle {
    config: SolverConfig,
    projection: ProjectionSet,
    session: Session,
    prelude: Vec<String>,
    frames: Vec<Vec<String>>,
    query_timeout: Option<Duration>,
    last: Option<SatResult>,
    stats: QueryStats,
    transcript: Option<BufWriter<File>>,
}

impl SubprocessOracle {
    pub fn open(config: SolverConfig, script: &SmtScript, projection: ProjectionSet) -> Result<Self, OracleError> {
        let transcript = match &config.transcript {
            Some(path) => Some(BufWriter::new(File::create(path)?)),
            None => None,
        };
        let session = Session::spawn(&config.command)?;
        let mut oracle = SubprocessOracle {
            query_timeout: config.query_timeout,
            config,
            projection,
            session,
            prelude: script.solver_prelude().into_iter().map(str::to_string).collect(),
            frames: vec![Vec::new()],
            last: None,
            stats: QueryStats::default(),
            transcript,
        };
        oracle.initialize()?;
        Ok(oracle)
    }

    fn initialize(&mut self) -> Result<(), OracleError> {
        self.command("(set-option :print-success true)")?;
        self.command("(set-option :produce-models true)")?;
        for k in 0..self.prelude.len() {
            let cmd = self.prelude[k].clone();
            self.command(&cmd)?;
        }
        Ok(())
    }

    /// Kills the solver, starts a new one and replays every live assertion.
    fn restart(&mut self) -> Result<(), OracleError> {
        self.session.kill();
        self.session = Session::spawn(&self.config.command)?;
        self.initialize()?;
        let frames = self.frames.clone();
        for (k, frame) in frames.iter().enumerate() {
            if k > 0 {
                self.command("(push 1)")?;
            }
            for cmd in frame {
                self.command(cmd)?;
            }
        }
        Ok(())
    }

    fn log(&mut self, text: &str, response: bool) {
        if let Some(t) = &mut self.transcript {
            let _ = if response {
                text.lines().try_for_each(|l| writeln!(t, "; {l}"))
            } else {
                writeln!(t, "{text}")
            };
            let _ = t.flush();
        }
    }

    fn send(&mut self, cmd: &str, timeout: Option<Duration>) -> Result<Reply, OracleError> {
        self.log(cmd, false);
        if writeln!(self.session.stdin, "{cmd}")
            .and_then(|_| self.session.stdin.flush())
            .is_err()
        {
            return Err(self.session.crashed());
        }
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut reply = String::new();
        loop {
            let line = match deadline {
                Some(d) => match self.session.lines.recv_timeout(d.saturating_duration_since(Instant::now())) {
                    Ok(line) => line,
                    Err(RecvTimeoutError::Timeout) => return Ok(Reply::TimedOut),
                    Err(RecvTimeoutError::Disconnected) => return Err(self.session.crashed()),
                },
                None => match self.session.lines.recv() {
                    Ok(line) => line,
                    Err(_) => return Err(self.session.crashed()),
                },
            };
            if reply.is_empty() && line.trim().is_empty() {
                continue;
            }
            if !reply.is_empty() {
                reply.push('\n');
            }
            reply.push_str(&line);
            if sexpr::paren_balance(&reply) <= 0 {
                break;
            }
        }
        self.log(&reply, true);
        Ok(Reply::Text(reply.trim().to_string()))
    }

    /// Sends a command that must answer `success`.
    fn command(&mut self, cmd: &str) -> Result<(), OracleError> {
        match self.send(cmd, Some(COMMAND_TIMEOUT))? {
            Reply::Text(r) if r == "success" => Ok(()),
            Reply::Text(r) => Err(OracleError::Protocol(format!("`{cmd}` answered `{r}`"))),
            Reply::TimedOut => Err(OracleError::Protocol(format!("`{cmd}` did not answer in time"))),
        }
    }

    /// Adds a raw assertion to the current frame.
    pub fn assert_text(&mut self, assertion: &str) -> Result<(), OracleError> {
        self.command(assertion)?;
        self.frames.last_mut().expect("base frame").push(assertion.to_string());
        self.stats.assertions_sent += 1;
        self.last = None;
        Ok(())
    }

    pub fn solver_command(&self) -> &str {
        &self.config.command
    }
}

impl Drop for SubprocessOracle {
    fn drop(&mut self) {
        let _ = writeln!(self.session.stdin, "(exit)");
        let _ = self.session.stdin.flush();
        let _ = self.session.child.wait_timeout_ms(100);
        self.session.kill();
    }
}

impl Oracle for SubprocessOracle {
    fn projection(&self) -> &ProjectionSet {
        &self.projection
    }

    fn check_sat(&mut self) -> Result<SatResult, OracleError> {
        self.stats.check_sat_calls += 1;
        let start = Instant::now();
        let reply = self.send("(check-sat)", self.query_timeout);
        self.stats.solver_time_secs += start.elapsed().as_secs_f64();
        let result = match reply? {
            Reply::Text(r) => match r.as_str() {
                "sat" => SatResult::Sat,
                "unsat" => SatResult::Unsat,
                "unknown" => SatResult::Unknown,
                other => return Err(OracleError::Protocol(format!("unexpected check-sat answer `{other}`"))),
            },
            Reply::TimedOut => {
                self.restart()?;
                SatResult::Timeout
            }
        };
        self.last = Some(result);
        Ok(result)
    }

    fn projected_model(&mut self) -> Result<ProjectedModel, OracleError> {
        if self.last != Some(SatResult::Sat) {
            return Err(OracleError::NoModel);
        }
        let names: Vec<&str> = self.projection.vars().iter().map(|v| v.name.as_str()).collect();
        let cmd = format!("(get-value ({}))", names.join(" "));
        let reply = match self.send(&cmd, Some(COMMAND_TIMEOUT))? {
            Reply::Text(r) => r,
            Reply::TimedOut => return Err(OracleError::Protocol("get-value did not answer in time".into())),
        };
        parse_values(&reply, &self.projection)
    }

    fn assert_constraint(&mut self, assertion: Assertion<'_>) -> Result<(), OracleError> {
        let text = render_assertion(assertion, &self.projection);
        self.assert_text(&text)
    }

    fn push(&mut self) -> Result<(), OracleError> {
        self.command("(push 1)")?;
        self.frames.push(Vec::new());
        self.last = None;
        Ok(())
    }

    fn pop(&mut self) -> Result<(), OracleError> {
        if self.frames.len() <= 1 {
            return Err(OracleError::StackUnderflow);
        }
        self.command("(pop 1)")?;
        self.frames.pop();
        self.last = None;
        Ok(())
    }

    fn depth(&self) -> usize {
        self.frames.len() - 1
    }

    fn stats(&self) -> &QueryStats {
        &self.stats
    }

    fn set_query_timeout(&mut self, timeout: Option<Duration>) {
        self.query_timeout = timeout;
    }
}

/// Parses a `get-value` response over the projection variables.
pub(crate) fn parse_values(reply: &str, projection: &ProjectionSet) -> Result<ProjectedModel, OracleError> {
    if reply.starts_with("(error") {
        return Err(OracleError::Protocol(reply.to_string()));
    }
    let expr = sexpr::read_one(reply).map_err(|e| OracleError::Protocol(format!("unreadable get-value reply: {e}")))?;
    let pairs = expr
        .list()
        .ok_or_else(|| OracleError::Protocol(format!("get-value reply is not a list: {reply}")))?;
    if pairs.len() != projection.len() {
        return Err(OracleError::Protocol(format!(
            "expected {} values, got {}: {reply}",
            projection.len(),
            pairs.len()
        )));
    }
    let values = pairs
        .iter()
        .zip(projection.vars())
        .map(|(pair, var)| match pair.list() {
            Some([_, value]) => parse_bv_literal(value, var.width),
            _ => Err(OracleError::Protocol(format!("malformed value entry `{pair}`"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ProjectedModel::new(values))
}

fn parse_bv_literal(value: &SExpr, width: u32) -> Result<BigUint, OracleError> {
    let bad = || OracleError::Protocol(format!("`{value}` is not a {width}-bit bitvector value"));
    let (digits, radix, bits) = match value {
        SExpr::Atom(a) if a.starts_with("#b") => (&a[2..], 2, a.len() as u64 - 2),
        SExpr::Atom(a) if a.starts_with("#x") => (&a[2..], 16, 4 * (a.len() as u64 - 2)),
        SExpr::List(items) => match items.as_slice() {
            [SExpr::Atom(u), SExpr::Atom(bv), SExpr::Atom(w)] if u == "_" && bv.starts_with("bv") => {
                let w: u32 = w.parse().map_err(|_| bad())?;
                let v = BigUint::parse_bytes(&bv.as_bytes()[2..], 10).ok_or_else(bad)?;
                if w != width || v.bits() > u64::from(width) {
                    return Err(bad());
                }
                return Ok(v);
            }
            _ => return Err(bad()),
        },
        _ => return Err(bad()),
    };
    if bits != u64::from(width) || digits.is_empty() {
        return Err(bad());
    }
    BigUint::parse_bytes(digits.as_bytes(), radix).ok_or_else(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smtlib::ProjectionVar;

    fn xy() -> ProjectionSet {
        ProjectionSet::new(vec![
            ProjectionVar { name: "x".into(), width: 4 },
            ProjectionVar { name: "y".into(), width: 8 },
        ])
        .unwrap()
    }

    #[test]
    fn parses_value_forms() {
        let m = parse_values("((x #b0101) (y #x0a))", &xy()).unwrap();
        assert_eq!(m.values(), &[BigUint::from(5u32), BigUint::from(10u32)]);
        let m = parse_values("((x (_ bv7 4))\n (y (_ bv255 8)))", &xy()).unwrap();
        assert_eq!(m.values(), &[BigUint::from(7u32), BigUint::from(255u32)]);
    }

    #[test]
    fn rejects_bad_values() {
        for reply in [
            "((x #b101) (y #x0a))",
            "((x #b0101) (y #x0a0))",
            "((x 5) (y #x0a))",
            "((x (_ bv16 4)) (y #x0a))",
            "((x #b0101))",
            "(error \"model not available\")",
            "((x #b0101) (y #x0a)",
        ] {
            assert!(matches!(parse_values(reply, &xy()), Err(OracleError::Protocol(_))), "{reply}");
        }
    }

    #[test]
    fn missing_binary_is_a_spawn_error() {
        let script = crate::smtlib::parse_declarations("(declare-const x (_ BitVec 4))").unwrap();
        let err = SubprocessOracle::open(
            SolverConfig::new("/nonexistent/solver-binary --flag"),
            &script,
            ProjectionSet::single("x", 4).unwrap(),
        )
        .err()
        .unwrap();
        assert!(matches!(err, OracleError::Spawn { .. }));
    }
}
