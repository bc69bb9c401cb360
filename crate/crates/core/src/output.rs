//! Delimited-text result files.
//!
//! Every file starts with `#`-prefixed header lines carrying the schema
//! version, the command, the seed and the fully resolved config as one line
//! of JSON, followed by a comma-separated table with a column header row:
//!
//! ```text
//! # schema: d2d-token/1
//! # command: solve
//! # seed: none
//! # config: {"model":{...}}
//! type,label,tokens,value,action
//! 0,s0,0,12.3,0
//! ```

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::learning::{CurvePoint, QTable};
use crate::model::MdpModel;
use crate::sim::{SimTrace, SlotEvent};
use crate::solver::{Policy, SweepPoint, ThresholdTable, ValueFunction};

pub const SCHEMA_VERSION: &str = "d2d-token/1";

/// Reproducibility header written at the top of every file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Header {
    pub command: String,
    pub seed: Option<u64>,
    /// Resolved config, serialized as single-line JSON.
    pub config_json: String,
    pub extra: Vec<(String, String)>,
}

impl Header {
    pub fn new(command: &str, seed: Option<u64>, config_json: String) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config_json,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    fn write(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "# schema: {SCHEMA_VERSION}")?;
        writeln!(out, "# command: {}", self.command)?;
        match self.seed {
            Some(s) => writeln!(out, "# seed: {s}")?,
            None => writeln!(out, "# seed: none")?,
        }
        writeln!(out, "# config: {}", self.config_json)?;
        for (k, v) in &self.extra {
            writeln!(out, "# {k}: {v}")?;
        }
        Ok(())
    }
}

/// Writes a header and a table to `path`.
pub fn write_table<I, R>(path: &Path, header: &Header, columns: &[&str], rows: I) -> io::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut file = BufWriter::new(File::create(path)?);
    header.write(&mut file)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(columns)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())?;
    }
    w.flush()?;
    Ok(())
}

/// Header lines, column names and rows.
pub type Table = (Vec<String>, Vec<String>, Vec<Vec<String>>);

/// Reads a file written by [`write_table`]: header lines (without `# `),
/// column names and rows.
pub fn read_table(path: &Path) -> io::Result<Table> {
    let text = std::fs::read_to_string(path)?;
    let mut header = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix("# ") {
            Some(h) if body.is_empty() => header.push(h.to_string()),
            _ => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let columns = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((header, columns, rows))
}

fn f(x: f64) -> String {
    format!("{x:.12}")
}

/// One row per state: `type,label,tokens,value,action`.
pub fn write_solution(
    path: &Path,
    header: &Header,
    model: &MdpModel,
    v: &ValueFunction,
    policy: &Policy,
) -> io::Result<()> {
    let rows = model.enumerate_states().into_iter().map(|s| {
        vec![
            s.traffic.to_string(),
            model.traffic.label(s.traffic).to_string(),
            s.tokens.to_string(),
            f(v.get(s)),
            policy.action(s).to_string(),
        ]
    });
    write_table(path, header, &["type", "label", "tokens", "value", "action"], rows)
}

/// One row per type: `type,label,benefit,threshold,never`.
pub fn write_thresholds(path: &Path, header: &Header, model: &MdpModel, t: &ThresholdTable) -> io::Result<()> {
    let rows = (0..model.num_types()).map(|s| {
        vec![
            s.to_string(),
            model.traffic.label(s).to_string(),
            f(model.traffic.benefit_of(s)),
            t.get(s).to_string(),
            t.is_never(s).to_string(),
        ]
    });
    write_table(path, header, &["type", "label", "benefit", "threshold", "never"], rows)
}

/// One row per grid value and type: `<param>,type,label,threshold,error`.
pub fn write_sweep(
    path: &Path,
    header: &Header,
    param: &str,
    model: &MdpModel,
    points: &[SweepPoint],
) -> io::Result<()> {
    let mut rows = Vec::new();
    for p in points {
        match &p.result {
            Ok(t) => {
                for s in 0..model.num_types() {
                    rows.push(vec![
                        p.value.to_string(),
                        s.to_string(),
                        model.traffic.label(s).to_string(),
                        t.get(s).to_string(),
                        String::new(),
                    ]);
                }
            }
            Err(e) => rows.push(vec![
                p.value.to_string(),
                String::new(),
                String::new(),
                String::new(),
                e.to_string(),
            ]),
        }
    }
    write_table(path, header, &[param, "type", "label", "threshold", "error"], rows)
}

/// `type,label,tokens,q0,q1,visits0,visits1,action`; inadmissible entries are blank.
pub fn write_qtable(path: &Path, header: &Header, model: &MdpModel, q: &QTable) -> io::Result<()> {
    use crate::model::Action;
    let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
    let rows = q.rows().map(|(s, q0, q1)| {
        vec![
            s.traffic.to_string(),
            model.traffic.label(s.traffic).to_string(),
            s.tokens.to_string(),
            opt(q0),
            opt(q1),
            q.visits(s, Action::ZERO).to_string(),
            q.visits(s, Action::ONE).to_string(),
            q.greedy_action(s).to_string(),
        ]
    });
    write_table(
        path,
        header,
        &["type", "label", "tokens", "q0", "q1", "visits0", "visits1", "action"],
        rows,
    )
}

/// `episode,slot,discounted_reward`.
pub fn write_curve(path: &Path, header: &Header, curve: &[CurvePoint]) -> io::Result<()> {
    let rows = curve
        .iter()
        .map(|c| vec![c.episode.to_string(), c.slot.to_string(), f(c.discounted_reward)]);
    write_table(path, header, &["episode", "slot", "discounted_reward"], rows)
}

/// Per-slot records: `slot,type,tokens,action,event,reward,token_delta`.
pub fn write_trace(path: &Path, header: &Header, trace: &SimTrace) -> io::Result<()> {
    let rows = trace.records.iter().map(|r| {
        vec![
            r.slot.to_string(),
            r.state.traffic.to_string(),
            r.state.tokens.to_string(),
            r.action.to_string(),
            r.event.name().to_string(),
            r.reward.to_string(),
            r.token_delta.to_string(),
        ]
    });
    write_table(
        path,
        header,
        &["slot", "type", "tokens", "action", "event", "reward", "token_delta"],
        rows,
    )
}

/// Run aggregates, one row per labelled trace:
/// `run,slots,average_reward,discounted_reward,spent,earned,<event counts>`.
pub fn write_trace_summaries(path: &Path, header: &Header, traces: &[(String, &SimTrace)]) -> io::Result<()> {
    let mut columns = vec!["run", "slots", "average_reward", "discounted_reward", "spent", "earned"];
    columns.extend(SlotEvent::ALL.iter().map(|e| e.name()));
    let rows = traces.iter().map(|(name, t)| {
        let mut row = vec![
            name.clone(),
            t.slots.to_string(),
            f(t.average_reward()),
            f(t.discounted_reward),
            t.total_spent().to_string(),
            t.earn_count.to_string(),
        ];
        row.extend(SlotEvent::ALL.iter().map(|e| t.event_count(*e).to_string()));
        row
    });
    write_table(path, header, &columns, rows)
}

/// Token usage histogram: `run,type,label,spent,share`.
pub fn write_token_usage(
    path: &Path,
    header: &Header,
    model: &MdpModel,
    traces: &[(String, &SimTrace)],
) -> io::Result<()> {
    let mut rows = Vec::new();
    for (name, t) in traces {
        let shares = t.spend_shares();
        for (s, (spent, share)) in t.spend_by_type.iter().zip(&shares).enumerate().skip(1) {
            rows.push(vec![
                name.clone(),
                s.to_string(),
                model.traffic.label(s).to_string(),
                spent.to_string(),
                f(*share),
            ]);
        }
    }
    write_table(path, header, &["run", "type", "label", "spent", "share"], rows)
}
