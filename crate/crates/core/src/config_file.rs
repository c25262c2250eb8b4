//! Experiment configuration text format.
//!
//! A flat `key = value` file. Blank lines and `#` comments are ignored.
//! Values are scalars or single-line bracketed lists:
//!
//! ```text
//! line   := [ key '=' value ] [ '#' comment ]
//! key    := [A-Za-z_][A-Za-z0-9_.]*
//! value  := scalar | '[' [ scalar { ',' scalar } [ ',' ] ] ']'
//! scalar := any text without ',' '[' ']' '#', surrounding blanks trimmed
//! ```
//!
//! Keys (required: `policy`, `n_users`):
//!
//! | key | value | default |
//! |-----|-------|---------|
//! | `policy` | `dpa`, `edf` or `fixed` | |
//! | `n_users` | positive integer | |
//! | `p_low`, `p_high` | power levels | 1, 2 |
//! | `V` | penalty weight | 60 |
//! | `horizon` | slots | 100000 |
//! | `seeds` | integer or list | `[0, 1, ..., 9]` |
//! | `arrival_prob` | scalar or per-user list | 0.4 |
//! | `deadline` | scalar or per-user list | 5 |
//! | `power_budget` | scalar or per-user list | 0.6 |
//! | `bad_channel_prob` | scalar or per-user list | 0.6 |
//! | `sweep.V`, `sweep.arrival_prob`, `sweep.power_budget` | non-empty list | not swept |
//! | `stride` | integer or `auto` | `auto` |
//! | `timeseries` | `none`, `first` or `all` | `none` |
//! | `output` | path | none |
//! | `fixed_trace` | list of per-slot power vectors `p1/p2/...` | |
//! | `channel_trace` | list of per-slot `B`/`G` strings, one char per user | |
//! | `arrival_trace` | list of per-slot `0`/`1` strings, one char per user | |
//! | `initial_backlog` | per-user list of `d1:d2:...` or `-` | empty |
//!
//! Swept values apply uniformly to every user. Sweep axes combine as a
//! Cartesian product in declaration order, first declared outermost.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{ChannelState, Deadline, PowerAllocation, SystemConfig, UserParams};
use crate::sim::{ForcedTraces, LogStride};

pub const DEFAULT_P_LOW: f64 = 1.0;
pub const DEFAULT_P_HIGH: f64 = 2.0;
pub const DEFAULT_DEADLINE: Deadline = 5;
pub const DEFAULT_V: f64 = 60.0;
pub const DEFAULT_BAD_CHANNEL_PROB: f64 = 0.6;
pub const DEFAULT_ARRIVAL_PROB: f64 = 0.4;
pub const DEFAULT_POWER_BUDGET: f64 = 0.6;
pub const DEFAULT_HORIZON: u64 = 100_000;
pub const DEFAULT_SEED_COUNT: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("invalid {field}: {reason}")]
    Field { field: String, reason: String },
}

fn field_err(field: impl Into<String>, reason: impl Into<String>) -> SpecError {
    SpecError::Field { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Dpa,
    Edf,
    Fixed,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Dpa => "dpa",
            PolicyKind::Edf => "edf",
            PolicyKind::Fixed => "fixed",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dpa" => Ok(PolicyKind::Dpa),
            "edf" => Ok(PolicyKind::Edf),
            "fixed" => Ok(PolicyKind::Fixed),
            other => Err(field_err("policy", format!("unknown policy `{other}` (expected dpa, edf or fixed)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    PenaltyWeight,
    ArrivalProb,
    PowerBudget,
}

impl SweepAxis {
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::PenaltyWeight => "sweep.V",
            SweepAxis::ArrivalProb => "sweep.arrival_prob",
            SweepAxis::PowerBudget => "sweep.power_budget",
        }
    }

    fn apply(self, config: &mut SystemConfig, value: f64) {
        match self {
            SweepAxis::PenaltyWeight => config.penalty_weight = value,
            SweepAxis::ArrivalProb => config.users.iter_mut().for_each(|u| u.arrival_prob = value),
            SweepAxis::PowerBudget => config.users.iter_mut().for_each(|u| u.power_budget = value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeSeriesOutput {
    #[default]
    None,
    /// Only the lowest seed of each sweep point.
    First,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// Base scenario; `seed` and swept fields are overridden per run.
    pub base: SystemConfig,
    pub policy: PolicyKind,
    /// Declaration order; every list is non-empty.
    pub sweep: Vec<(SweepAxis, Vec<f64>)>,
    /// Ascending.
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    pub stride: LogStride,
    pub timeseries: TimeSeriesOutput,
    pub fixed_trace: Vec<PowerAllocation>,
    pub traces: Option<ForcedTraces>,
}

/// One point of the sweep's Cartesian product.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub config: SystemConfig,
}

impl ExperimentSpec {
    /// Sweep points in canonical order, each with the base seed.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let mut configs = vec![self.base.clone()];
        for (axis, values) in &self.sweep {
            configs = configs
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |&v| {
                        let mut next = c.clone();
                        axis.apply(&mut next, v);
                        next
                    })
                })
                .collect();
        }
        configs.into_iter().enumerate().map(|(index, config)| SweepPoint { index, config }).collect()
    }

    /// Renders the spec back into the configuration text format.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let base = &self.base;
        let per_user = |f: &dyn Fn(&UserParams) -> String| list(base.users.iter().map(f));
        let _ = writeln!(out, "policy = {}", self.policy.name());
        let _ = writeln!(out, "n_users = {}", base.n_users());
        let _ = writeln!(out, "p_low = {}", base.p_low);
        let _ = writeln!(out, "p_high = {}", base.p_high);
        let _ = writeln!(out, "V = {}", base.penalty_weight);
        let _ = writeln!(out, "horizon = {}", base.horizon);
        let _ = writeln!(out, "seeds = {}", list(self.seeds.iter().map(u64::to_string)));
        let _ = writeln!(out, "arrival_prob = {}", per_user(&|u| u.arrival_prob.to_string()));
        let _ = writeln!(out, "deadline = {}", per_user(&|u| u.deadline.to_string()));
        let _ = writeln!(out, "power_budget = {}", per_user(&|u| u.power_budget.to_string()));
        let _ = writeln!(out, "bad_channel_prob = {}", per_user(&|u| u.bad_channel_prob.to_string()));
        for (axis, values) in &self.sweep {
            let _ = writeln!(out, "{} = {}", axis.key(), list(values.iter().map(f64::to_string)));
        }
        match self.stride {
            LogStride::Auto => out.push_str("stride = auto\n"),
            LogStride::Every(n) => {
                let _ = writeln!(out, "stride = {n}");
            }
        }
        let ts = match self.timeseries {
            TimeSeriesOutput::None => "none",
            TimeSeriesOutput::First => "first",
            TimeSeriesOutput::All => "all",
        };
        let _ = writeln!(out, "timeseries = {ts}");
        if let Some(path) = &self.output {
            let _ = writeln!(out, "output = {}", path.display());
        }
        if !self.fixed_trace.is_empty() {
            let slots = self.fixed_trace.iter().map(|a| {
                a.powers().iter().map(f64::to_string).collect::<Vec<_>>().join("/")
            });
            let _ = writeln!(out, "fixed_trace = {}", list(slots));
        }
        if let Some(traces) = &self.traces {
            let channels = traces.channels.iter().map(|row| row.iter().map(|s| s.as_char()).collect::<String>());
            let arrivals =
                traces.arrivals.iter().map(|row| row.iter().map(|&a| if a { '1' } else { '0' }).collect::<String>());
            let _ = writeln!(out, "channel_trace = {}", list(channels));
            let _ = writeln!(out, "arrival_trace = {}", list(arrivals));
            if !traces.initial_backlog.is_empty() {
                let queues = traces.initial_backlog.iter().map(|q| {
                    if q.is_empty() {
                        "-".to_string()
                    } else {
                        q.iter().map(u32::to_string).collect::<Vec<_>>().join(":")
                    }
                });
                let _ = writeln!(out, "initial_backlog = {}", list(queues));
            }
        }
        out
    }
}

fn list(items: impl Iterator<Item = String>) -> String {
    format!("[{}]", items.collect::<Vec<_>>().join(", "))
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Scalar(String),
    List(Vec<String>),
}

#[derive(Debug)]
struct Entry {
    value: Value,
}

const KNOWN_KEYS: &[&str] = &[
    "policy",
    "n_users",
    "p_low",
    "p_high",
    "V",
    "horizon",
    "seeds",
    "arrival_prob",
    "deadline",
    "power_budget",
    "bad_channel_prob",
    "sweep.V",
    "sweep.arrival_prob",
    "sweep.power_budget",
    "stride",
    "timeseries",
    "output",
    "fixed_trace",
    "channel_trace",
    "arrival_trace",
    "initial_backlog",
];

fn valid_key(key: &str) -> bool {
    let mut chars = key.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_scalar(raw: &str, line: usize) -> Result<String, SpecError> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(SpecError::Syntax { line, message: "empty value".into() });
    }
    if s.contains(['[', ']', ',']) {
        return Err(SpecError::Syntax { line, message: format!("unexpected list syntax in `{s}`") });
    }
    Ok(s.to_string())
}

fn parse_value(raw: &str, line: usize) -> Result<Value, SpecError> {
    let raw = raw.trim();
    let Some(inner) = raw.strip_prefix('[') else {
        return parse_scalar(raw, line).map(Value::Scalar);
    };
    let inner = inner
        .strip_suffix(']')
        .ok_or_else(|| SpecError::Syntax { line, message: "list is missing its closing `]`".into() })?;
    if inner.trim().is_empty() {
        return Ok(Value::List(Vec::new()));
    }
    let inner = inner.trim_end();
    let inner = inner.strip_suffix(',').unwrap_or(inner);
    inner.split(',').map(|item| parse_scalar(item, line)).collect::<Result<_, _>>().map(Value::List)
}

/// Splits the text into raw key/value entries with line numbers (1-based).
fn tokenize(text: &str) -> Result<(Vec<String>, BTreeMap<String, Entry>), SpecError> {
    let mut order = Vec::new();
    let mut entries = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| SpecError::Syntax { line, message: format!("expected `key = value`, got `{content}`") })?;
        let key = key.trim();
        if !valid_key(key) {
            return Err(SpecError::Syntax { line, message: format!("invalid key `{key}`") });
        }
        if !KNOWN_KEYS.contains(&key) {
            return Err(SpecError::UnknownKey { line, key: key.to_string() });
        }
        if entries.contains_key(key) {
            return Err(SpecError::DuplicateKey { line, key: key.to_string() });
        }
        let value = parse_value(value, line)?;
        order.push(key.to_string());
        entries.insert(key.to_string(), Entry { value });
    }
    Ok((order, entries))
}

struct Fields {
    entries: BTreeMap<String, Entry>,
}

impl Fields {
    fn scalar(&self, key: &'static str) -> Result<Option<&str>, SpecError> {
        match self.entries.get(key).map(|e| &e.value) {
            None => Ok(None),
            Some(Value::Scalar(s)) => Ok(Some(s)),
            Some(Value::List(_)) => Err(field_err(key, "expected a single value, not a list")),
        }
    }

    fn items(&self, key: &'static str) -> Option<Vec<&str>> {
        self.entries.get(key).map(|e| match &e.value {
            Value::Scalar(s) => vec![s.as_str()],
            Value::List(items) => items.iter().map(String::as_str).collect(),
        })
    }

    fn list(&self, key: &'static str) -> Result<Option<Vec<&str>>, SpecError> {
        match self.entries.get(key).map(|e| &e.value) {
            None => Ok(None),
            Some(Value::List(items)) => Ok(Some(items.iter().map(String::as_str).collect())),
            Some(Value::Scalar(_)) => Err(field_err(key, "expected a bracketed list")),
        }
    }

    fn parsed<T: FromStr>(&self, key: &'static str) -> Result<Option<T>, SpecError> {
        self.scalar(key)?.map(|s| parse_as(key, s)).transpose()
    }

    /// A scalar broadcast to every user, or a list with one entry per user.
    fn per_user<T: FromStr + Clone>(&self, key: &'static str, n: usize, default: T) -> Result<Vec<T>, SpecError> {
        let Some(items) = self.items(key) else {
            return Ok(vec![default; n]);
        };
        let values: Vec<T> = items.iter().map(|s| parse_as(key, s)).collect::<Result<_, _>>()?;
        match (self.entries[key].value.clone(), values.len()) {
            (Value::Scalar(_), _) => Ok(vec![values[0].clone(); n]),
            (Value::List(_), len) if len == n => Ok(values),
            (Value::List(_), len) => Err(field_err(key, format!("list has {len} entries, expected n_users={n}"))),
        }
    }
}

fn parse_as<T: FromStr>(key: &str, s: &str) -> Result<T, SpecError> {
    let value = s.parse::<T>().map_err(|_| field_err(key, format!("cannot parse `{s}`")))?;
    Ok(value)
}

fn parse_real(key: &str, s: &str) -> Result<f64, SpecError> {
    let v: f64 = parse_as(key, s)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(field_err(key, format!("`{s}` is not a finite number")))
    }
}

fn parse_channels(token: &str, n: usize, slot: usize) -> Result<Vec<ChannelState>, SpecError> {
    let row: Vec<ChannelState> = token
        .chars()
        .map(|c| match c {
            'B' | 'b' => Ok(ChannelState::Bad),
            'G' | 'g' => Ok(ChannelState::Good),
            other => Err(field_err("channel_trace", format!("slot {}: unknown channel state `{other}`", slot + 1))),
        })
        .collect::<Result<_, _>>()?;
    if row.len() != n {
        return Err(field_err("channel_trace", format!("slot {} has {} states, expected {n}", slot + 1, row.len())));
    }
    Ok(row)
}

fn parse_arrivals(token: &str, n: usize, slot: usize) -> Result<Vec<bool>, SpecError> {
    let row: Vec<bool> = token
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(field_err("arrival_trace", format!("slot {}: expected 0 or 1, got `{other}`", slot + 1))),
        })
        .collect::<Result<_, _>>()?;
    if row.len() != n {
        return Err(field_err("arrival_trace", format!("slot {} has {} entries, expected {n}", slot + 1, row.len())));
    }
    Ok(row)
}

fn parse_allocation(token: &str, n: usize, slot: usize) -> Result<PowerAllocation, SpecError> {
    let powers: Vec<f64> = token.split('/').map(|p| parse_real("fixed_trace", p.trim())).collect::<Result<_, _>>()?;
    if powers.len() != n {
        return Err(field_err("fixed_trace", format!("slot {} has {} powers, expected {n}", slot + 1, powers.len())));
    }
    if powers.iter().any(|&p| p < 0.0) {
        return Err(field_err("fixed_trace", format!("slot {}: negative power", slot + 1)));
    }
    Ok(PowerAllocation::from_powers(powers))
}

fn parse_backlog(token: &str) -> Result<Vec<Deadline>, SpecError> {
    if token == "-" {
        return Ok(Vec::new());
    }
    token.split(':').map(|d| parse_as("initial_backlog", d.trim())).collect()
}

/// Parses and validates an experiment configuration, applying defaults.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, SpecError> {
    let (order, entries) = tokenize(text)?;
    let fields = Fields { entries };

    let policy: PolicyKind = fields.scalar("policy")?.ok_or(SpecError::Missing("policy"))?.parse()?;
    let n_users: usize = fields.parsed("n_users")?.ok_or(SpecError::Missing("n_users"))?;
    if n_users == 0 {
        return Err(field_err("n_users", "must be at least 1"));
    }
    let real = |key: &'static str, default: f64| -> Result<f64, SpecError> {
        fields.scalar(key)?.map_or(Ok(default), |s| parse_real(key, s))
    };
    let p_low = real("p_low", DEFAULT_P_LOW)?;
    let p_high = real("p_high", DEFAULT_P_HIGH)?;
    let penalty_weight = real("V", DEFAULT_V)?;
    let horizon = fields.parsed("horizon")?.unwrap_or(DEFAULT_HORIZON);

    let check_reals = |key: &'static str, values: Vec<f64>| -> Result<Vec<f64>, SpecError> {
        match values.iter().find(|v| !v.is_finite()) {
            Some(v) => Err(field_err(key, format!("`{v}` is not a finite number"))),
            None => Ok(values),
        }
    };
    let arrival = check_reals("arrival_prob", fields.per_user("arrival_prob", n_users, DEFAULT_ARRIVAL_PROB)?)?;
    let deadline = fields.per_user("deadline", n_users, DEFAULT_DEADLINE)?;
    let budget = check_reals("power_budget", fields.per_user("power_budget", n_users, DEFAULT_POWER_BUDGET)?)?;
    let bad = check_reals("bad_channel_prob", fields.per_user("bad_channel_prob", n_users, DEFAULT_BAD_CHANNEL_PROB)?)?;

    let users = (0..n_users)
        .map(|i| UserParams {
            arrival_prob: arrival[i],
            deadline: deadline[i],
            power_budget: budget[i],
            bad_channel_prob: bad[i],
        })
        .collect();
    let base = SystemConfig { p_low, p_high, users, penalty_weight, horizon, seed: 0 };
    base.validate().map_err(|e| field_err(e.field, e.to_string()))?;

    let mut seeds: Vec<u64> = match fields.items("seeds") {
        Some(items) => items.iter().map(|s| parse_as("seeds", s)).collect::<Result<_, _>>()?,
        None => (0..DEFAULT_SEED_COUNT).collect(),
    };
    if seeds.is_empty() {
        return Err(field_err("seeds", "seed list is empty"));
    }
    seeds.sort_unstable();

    let mut sweep = Vec::new();
    for key in &order {
        let axis = match key.as_str() {
            "sweep.V" => SweepAxis::PenaltyWeight,
            "sweep.arrival_prob" => SweepAxis::ArrivalProb,
            "sweep.power_budget" => SweepAxis::PowerBudget,
            _ => continue,
        };
        let items = fields.list(axis.key())?.unwrap_or_default();
        if items.is_empty() {
            return Err(field_err(axis.key(), "sweep axis is empty"));
        }
        let values: Vec<f64> = items.iter().map(|s| parse_real(axis.key(), s)).collect::<Result<_, _>>()?;
        sweep.push((axis, values));
    }

    let stride = match fields.scalar("stride")? {
        None | Some("auto") => LogStride::Auto,
        Some(s) => {
            let n: u64 = parse_as("stride", s)?;
            if n == 0 {
                return Err(field_err("stride", "must be at least 1"));
            }
            LogStride::Every(n)
        }
    };
    let timeseries = match fields.scalar("timeseries")? {
        None | Some("none") => TimeSeriesOutput::None,
        Some("first") => TimeSeriesOutput::First,
        Some("all") => TimeSeriesOutput::All,
        Some(other) => return Err(field_err("timeseries", format!("expected none, first or all, got `{other}`"))),
    };
    let output = fields.scalar("output")?.map(PathBuf::from);

    let fixed_trace: Vec<PowerAllocation> = fields
        .list("fixed_trace")?
        .unwrap_or_default()
        .iter()
        .enumerate()
        .map(|(t, tok)| parse_allocation(tok, n_users, t))
        .collect::<Result<_, _>>()?;
    if policy == PolicyKind::Fixed && fixed_trace.is_empty() {
        return Err(field_err("fixed_trace", "policy `fixed` needs a non-empty fixed_trace"));
    }
    if policy == PolicyKind::Fixed && (fixed_trace.len() as u64) < horizon {
        return Err(field_err(
            "fixed_trace",
            format!("trace has {} slots, horizon is {horizon}", fixed_trace.len()),
        ));
    }

    let channel_trace = fields.list("channel_trace")?;
    let arrival_trace = fields.list("arrival_trace")?;
    let initial_backlog = fields.list("initial_backlog")?;
    let traces = match (channel_trace, arrival_trace) {
        (None, None) => {
            if initial_backlog.is_some() {
                return Err(field_err("initial_backlog", "requires channel_trace and arrival_trace"));
            }
            None
        }
        (Some(channels), Some(arrivals)) => {
            let channels: Vec<_> =
                channels.iter().enumerate().map(|(t, tok)| parse_channels(tok, n_users, t)).collect::<Result<_, _>>()?;
            let arrivals: Vec<_> =
                arrivals.iter().enumerate().map(|(t, tok)| parse_arrivals(tok, n_users, t)).collect::<Result<_, _>>()?;
            for (key, len) in [("channel_trace", channels.len()), ("arrival_trace", arrivals.len())] {
                if (len as u64) < horizon {
                    return Err(field_err(key, format!("trace has {len} slots, horizon is {horizon}")));
                }
            }
            let initial_backlog: Vec<Vec<Deadline>> = match initial_backlog {
                None => Vec::new(),
                Some(queues) => {
                    if queues.len() != n_users {
                        return Err(field_err(
                            "initial_backlog",
                            format!("{} queues given, expected n_users={n_users}", queues.len()),
                        ));
                    }
                    let parsed: Vec<Vec<Deadline>> = queues.iter().map(|q| parse_backlog(q)).collect::<Result<_, _>>()?;
                    for (i, (q, user)) in parsed.iter().zip(&base.users).enumerate() {
                        crate::model::UserQueue::from_deadlines(q.iter().copied(), user.deadline)
                            .map_err(|e| field_err("initial_backlog", format!("user {}: {e}", i + 1)))?;
                    }
                    parsed
                }
            };
            Some(ForcedTraces { channels, arrivals, initial_backlog })
        }
        (Some(_), None) => return Err(field_err("arrival_trace", "channel_trace given without arrival_trace")),
        (None, Some(_)) => return Err(field_err("channel_trace", "arrival_trace given without channel_trace")),
    };

    let spec = ExperimentSpec { base, policy, sweep, seeds, output, stride, timeseries, fixed_trace, traces };
    for point in spec.sweep_points() {
        point.config.validate().map_err(|e| field_err(e.field, e.to_string()))?;
    }
    Ok(spec)
}
