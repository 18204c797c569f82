//! The plain-text workload format and the scripted workload generator.
//!
//! A workload file looks like:
//!
//! ```text
//! # dyncolor workload v1
//! n=100 delta=8 mode=batch seed=7
//! + 0 1
//! + 2 3
//! F
//! - 0 1
//! ```
//!
//! `+ u v` inserts an edge, `- u v` deletes one, and a bare `F` is a flush
//! marker: the batch runner applies everything since the previous marker as
//! one batch, and the message-passing runner feeds it to one network round.
//! The sequential runners ignore flushes. Blank lines are allowed; parse
//! errors report one-based line numbers.

use std::fmt;
use std::str::FromStr;

use dyncolor::ids::{EdgeKey, UpdateEvent, VertexId};
use indexmap::IndexSet;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const WORKLOAD_HEADER: &str = "# dyncolor workload v1";

/// Which engine a workload runs against.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Seq,
    Batch,
    Congest,
    Deamortized,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Seq, Mode::Batch, Mode::Congest, Mode::Deamortized];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Seq => "seq",
            Mode::Batch => "batch",
            Mode::Congest => "congest",
            Mode::Deamortized => "deamortized",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected seq, batch, congest, deamortized)"))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line 1: expected header {WORKLOAD_HEADER:?}")]
    MissingHeader,
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, msg: msg.into() }
}

/// A parsed workload: the instance parameters plus the event stream split
/// into flush-separated chunks.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Workload {
    pub n: u32,
    pub delta: u32,
    pub mode: Mode,
    pub seed: u64,
    pub chunks: Vec<Vec<UpdateEvent>>,
}

impl Workload {
    pub fn total_events(&self) -> usize {
        self.chunks.iter().map(Vec::len).sum()
    }

    /// Render in the workload file format; `parse` inverts this exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(WORKLOAD_HEADER);
        out.push('\n');
        out.push_str(&format!(
            "n={} delta={} mode={} seed={}\n",
            self.n, self.delta, self.mode, self.seed
        ));
        for (i, chunk) in self.chunks.iter().enumerate() {
            if i > 0 {
                out.push_str("F\n");
            }
            for ev in chunk {
                let sign = match ev.kind {
                    dyncolor::ids::UpdateKind::Insert => '+',
                    dyncolor::ids::UpdateKind::Delete => '-',
                };
                out.push_str(&format!("{sign} {} {}\n", ev.u.0, ev.v.0));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Workload, ParseError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(ParseError::MissingHeader)?;
        if header.trim_end() != WORKLOAD_HEADER {
            return Err(ParseError::MissingHeader);
        }
        let (_, params) =
            lines.next().ok_or_else(|| syntax(2, "missing parameter line".to_string()))?;
        let mut n = None;
        let mut delta = None;
        let mut mode = None;
        let mut seed = None;
        for field in params.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| syntax(2, format!("expected key=value, found {field:?}")))?;
            match key {
                "n" => n = Some(parse_num(2, key, value)?),
                "delta" => delta = Some(parse_num(2, key, value)?),
                "seed" => seed = Some(parse_num(2, key, value)?),
                "mode" => {
                    mode = Some(Mode::from_str(value).map_err(|e| syntax(2, e))?);
                }
                other => return Err(syntax(2, format!("unknown parameter {other:?}"))),
            }
        }
        let n = n.ok_or_else(|| syntax(2, "missing n="))? as u32;
        let delta = delta.ok_or_else(|| syntax(2, "missing delta="))? as u32;
        let mode = mode.ok_or_else(|| syntax(2, "missing mode="))?;
        let seed = seed.ok_or_else(|| syntax(2, "missing seed="))?;

        let mut chunks = vec![Vec::new()];
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if line == "F" {
                chunks.push(Vec::new());
                continue;
            }
            let mut parts = line.split_whitespace();
            let sign = parts.next().expect("non-empty line has a first token");
            let kind = match sign {
                "+" => dyncolor::ids::UpdateKind::Insert,
                "-" => dyncolor::ids::UpdateKind::Delete,
                other => {
                    return Err(syntax(
                        line_no,
                        format!("expected '+ u v', '- u v', or 'F', found {other:?}"),
                    ))
                }
            };
            let u = parse_vertex(line_no, parts.next(), n)?;
            let v = parse_vertex(line_no, parts.next(), n)?;
            if let Some(extra) = parts.next() {
                return Err(syntax(line_no, format!("trailing token {extra:?}")));
            }
            chunks
                .last_mut()
                .expect("chunk list is never empty")
                .push(UpdateEvent { kind, u, v });
        }
        Ok(Workload { n, delta, mode, seed, chunks })
    }
}

fn parse_num(line: usize, key: &str, value: &str) -> Result<u64, ParseError> {
    value.parse::<u64>().map_err(|_| syntax(line, format!("{key}= wants an integer, found {value:?}")))
}

fn parse_vertex(line: usize, token: Option<&str>, n: u32) -> Result<VertexId, ParseError> {
    let token = token.ok_or_else(|| syntax(line, "missing vertex id"))?;
    let id: u32 =
        token.parse().map_err(|_| syntax(line, format!("bad vertex id {token:?}")))?;
    if id >= n {
        return Err(syntax(line, format!("vertex {id} outside [0, {n})")));
    }
    Ok(VertexId(id))
}

/// Churn shapes the generator can produce.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Profile {
    /// Inserts and deletes steered toward an average degree of delta/2.
    RandomChurn,
    /// Insertions only, until the density target or the event budget.
    InsertOnly,
    /// A build-up phase, then three deletes for every insert.
    DeleteHeavy,
    /// Random churn with half of all events touching a small vertex core.
    Hotspot,
}

impl Profile {
    pub const ALL: [Profile; 4] =
        [Profile::RandomChurn, Profile::InsertOnly, Profile::DeleteHeavy, Profile::Hotspot];

    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::RandomChurn => "random-churn",
            Profile::InsertOnly => "insert-only",
            Profile::DeleteHeavy => "delete-heavy",
            Profile::Hotspot => "hotspot",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Profile::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            format!("unknown profile {s:?} (expected random-churn, insert-only, delete-heavy, hotspot)")
        })
    }
}

pub struct GenConfig {
    pub n: u32,
    pub delta: u32,
    pub events: usize,
    pub seed: u64,
    pub mode: Mode,
    pub profile: Profile,
    /// Mean events per flush chunk for batch and congest workloads.
    pub flush_mean: f64,
}

/// Draw from Poisson(`mean`) by multiplying uniforms until the product
/// drops under e^-mean.
fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    let floor = (-mean).exp();
    let mut k = 0usize;
    let mut p = 1.0f64;
    loop {
        p *= rng.gen::<f64>();
        if p <= floor || k >= 100_000 {
            return k;
        }
        k += 1;
    }
}

/// Generate a valid-by-construction workload: no loops or duplicates, no
/// deletes of absent edges, degrees capped at delta. Deterministic in the
/// config. May emit fewer events than asked if the profile saturates.
pub fn generate(cfg: &GenConfig) -> Workload {
    let mut rng = dyncolor::rng::stream_rng(cfg.seed, 0xA1, &[]);
    let mut present: IndexSet<EdgeKey> = IndexSet::new();
    let mut degrees = vec![0u32; cfg.n as usize];
    let target_edges = (cfg.n as u64 * cfg.delta as u64 / 4).max(1);
    let core = (cfg.n / 50).max(2).min(cfg.n);
    let mut events: Vec<UpdateEvent> = Vec::with_capacity(cfg.events);

    let draw_vertex = |rng: &mut ChaCha8Rng, hot: bool| -> VertexId {
        if hot && rng.gen_bool(0.5) {
            VertexId(rng.gen_range(0..core))
        } else {
            VertexId(rng.gen_range(0..cfg.n))
        }
    };

    'outer: while events.len() < cfg.events {
        let build_phase = events.len() * 10 < cfg.events * 3;
        let want_insert = match cfg.profile {
            Profile::InsertOnly => true,
            Profile::DeleteHeavy => present.is_empty() || (build_phase || rng.gen_bool(0.25)),
            Profile::RandomChurn | Profile::Hotspot => {
                present.is_empty()
                    || if (present.len() as u64) < target_edges {
                        rng.gen_bool(0.7)
                    } else {
                        rng.gen_bool(0.3)
                    }
            }
        };
        if want_insert {
            let hot = cfg.profile == Profile::Hotspot;
            let mut found = false;
            for _ in 0..64 * cfg.n as usize {
                let u = draw_vertex(&mut rng, hot);
                let v = draw_vertex(&mut rng, hot);
                if u == v || degrees[u.idx()] >= cfg.delta || degrees[v.idx()] >= cfg.delta {
                    continue;
                }
                let key = EdgeKey::new(u, v);
                if !present.insert(key) {
                    continue;
                }
                degrees[u.idx()] += 1;
                degrees[v.idx()] += 1;
                events.push(UpdateEvent::insert(u, v));
                found = true;
                break;
            }
            if !found {
                if cfg.profile == Profile::InsertOnly {
                    break 'outer;
                }
                // Saturated; fall through to a delete next iteration.
                if present.is_empty() {
                    break 'outer;
                }
                let i = rng.gen_range(0..present.len());
                let key = *present.get_index(i).expect("index in range");
                present.swap_remove(&key);
                degrees[key.0.idx()] -= 1;
                degrees[key.1.idx()] -= 1;
                events.push(UpdateEvent::delete(key.0, key.1));
            }
        } else {
            let i = rng.gen_range(0..present.len());
            let key = *present.get_index(i).expect("index in range");
            present.swap_remove(&key);
            degrees[key.0.idx()] -= 1;
            degrees[key.1.idx()] -= 1;
            events.push(UpdateEvent::delete(key.0, key.1));
        }
    }

    let chunks = match cfg.mode {
        Mode::Seq | Mode::Deamortized => vec![events],
        Mode::Batch | Mode::Congest => {
            let mut chunks = Vec::new();
            let mut cursor = 0;
            while cursor < events.len() {
                let len = poisson(&mut rng, cfg.flush_mean).min(events.len() - cursor);
                chunks.push(events[cursor..cursor + len].to_vec());
                cursor += len;
            }
            if chunks.is_empty() {
                chunks.push(Vec::new());
            }
            chunks
        }
    };

    Workload { n: cfg.n, delta: cfg.delta, mode: cfg.mode, seed: cfg.seed, chunks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips_through_parse() {
        let cfg = GenConfig {
            n: 50,
            delta: 6,
            events: 300,
            seed: 11,
            mode: Mode::Batch,
            profile: Profile::RandomChurn,
            flush_mean: 4.0,
        };
        let wl = generate(&cfg);
        assert_eq!(wl.total_events(), 300);
        let text = wl.to_text();
        let back = Workload::parse(&text).unwrap();
        assert_eq!(wl, back);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig {
            n: 80,
            delta: 8,
            events: 500,
            seed: 99,
            mode: Mode::Congest,
            profile: Profile::Hotspot,
            flush_mean: 3.0,
        };
        assert_eq!(generate(&cfg).to_text(), generate(&cfg).to_text());
    }

    #[test]
    fn generated_scripts_replay_cleanly() {
        for profile in Profile::ALL {
            let cfg = GenConfig {
                n: 40,
                delta: 5,
                events: 400,
                seed: 3,
                mode: Mode::Seq,
                profile,
                flush_mean: 4.0,
            };
            let wl = generate(&cfg);
            let mut present: IndexSet<EdgeKey> = IndexSet::new();
            let mut degrees = vec![0u32; 40];
            for ev in wl.chunks.iter().flatten() {
                let key = ev.key();
                assert_ne!(ev.u, ev.v);
                match ev.kind {
                    dyncolor::ids::UpdateKind::Insert => {
                        assert!(present.insert(key), "duplicate insert {key}");
                        degrees[ev.u.idx()] += 1;
                        degrees[ev.v.idx()] += 1;
                        assert!(degrees[ev.u.idx()] <= 5 && degrees[ev.v.idx()] <= 5);
                    }
                    dyncolor::ids::UpdateKind::Delete => {
                        assert!(present.swap_remove(&key), "delete of absent {key}");
                        degrees[ev.u.idx()] -= 1;
                        degrees[ev.v.idx()] -= 1;
                    }
                }
            }
        }
    }

    #[test]
    fn insert_only_stops_at_saturation_instead_of_looping() {
        let cfg = GenConfig {
            n: 6,
            delta: 2,
            events: 10_000,
            seed: 1,
            mode: Mode::Seq,
            profile: Profile::InsertOnly,
            flush_mean: 4.0,
        };
        let wl = generate(&cfg);
        assert!(wl.total_events() <= 6); // 6 vertices of degree ≤ 2
        assert!(wl.total_events() >= 4);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "# dyncolor workload v1\nn=4 delta=2 mode=seq seed=0\n+ 0 1\n* 2 3\n";
        match Workload::parse(text) {
            Err(ParseError::Syntax { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected a syntax error, got {other:?}"),
        }
        let text = "# dyncolor workload v1\nn=4 delta=2 mode=seq seed=0\n+ 0 9\n";
        match Workload::parse(text) {
            Err(ParseError::Syntax { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("outside"));
            }
            other => panic!("expected a syntax error, got {other:?}"),
        }
        assert_eq!(Workload::parse("bogus\n"), Err(ParseError::MissingHeader));
    }

    #[test]
    fn poisson_mean_is_roughly_right() {
        let mut rng = dyncolor::rng::stream_rng(5, 0xA2, &[]);
        let n = 20_000;
        let total: usize = (0..n).map(|_| poisson(&mut rng, 4.0)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 4.0).abs() < 0.1, "poisson mean drifted to {mean}");
    }
}
