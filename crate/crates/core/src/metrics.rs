//! Episode scores, the subpolicy probe, and CSV/SVG learning-curve reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::overcooked::{self, Direction, Leg, OverCookedConfig, LEGS};
use crate::envs::EnvConfig;
use crate::error::{self, Error, Result};
use crate::ppo::PolicyLearner;
use crate::seeding::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: u64,
    pub reward: f64,
    pub length: u64,
    /// Training step at which the episode ended.
    pub step: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    records: Vec<EpisodeRecord>,
}

impl EpisodeLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EpisodeRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.index <= last.index {
                return Err(Error::Invalid(format!(
                    "episode index {} does not follow {}",
                    record.index, last.index
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Appends with the next index.
    pub fn record(&mut self, reward: f64, length: u64, step: u64) {
        let index = self.records.last().map_or(0, |r| r.index + 1);
        self.records.push(EpisodeRecord {
            index,
            reward,
            length,
            step,
        });
    }

    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.reward)
    }
}

pub const FINAL_WINDOW: usize = 100;

fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Invalid("score of an empty episode log".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean reward over the last 100 episodes, or over all of them when fewer.
pub fn final_performance_score(log: &EpisodeLog) -> Result<f64> {
    let rewards: Vec<f64> = log.rewards().collect();
    let start = rewards.len().saturating_sub(FINAL_WINDOW);
    mean(&rewards[start..])
}

/// Mean reward over every episode of training.
pub fn learning_speed_score(log: &EpisodeLog) -> Result<f64> {
    let rewards: Vec<f64> = log.rewards().collect();
    mean(&rewards)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeLabel {
    North,
    South,
    East,
    West,
    Stay,
    Other,
}

impl ProbeLabel {
    pub const USEFUL: [ProbeLabel; 5] = [
        ProbeLabel::North,
        ProbeLabel::South,
        ProbeLabel::East,
        ProbeLabel::West,
        ProbeLabel::Stay,
    ];

    fn from_direction(d: Direction) -> Self {
        match d {
            Direction::Up => ProbeLabel::North,
            Direction::Down => ProbeLabel::South,
            Direction::Left => ProbeLabel::West,
            Direction::Right => ProbeLabel::East,
        }
    }
}

impl std::fmt::Display for ProbeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProbeLabel::North => "north",
            ProbeLabel::South => "south",
            ProbeLabel::East => "east",
            ProbeLabel::West => "west",
            ProbeLabel::Stay => "stay",
            ProbeLabel::Other => "other",
        };
        f.write_str(s)
    }
}

/// Number of distinct useful labels in a probe result.
pub fn distinct_useful(labels: &[ProbeLabel]) -> usize {
    ProbeLabel::USEFUL.iter().filter(|l| labels.contains(l)).count()
}

/// A bottom-level policy as seen by the probe.
pub trait SubpolicyActor {
    /// Action for `observation` under upper action `upper`, `step` steps into the probe.
    fn act(&mut self, observation: &[f64], upper: usize, step: usize) -> Result<usize>;
}

/// Argmax of a trained policy's logits.
pub struct GreedyActor<'a> {
    pub policy: &'a PolicyLearner,
}

impl SubpolicyActor for GreedyActor<'_> {
    fn act(&mut self, observation: &[f64], upper: usize, _step: usize) -> Result<usize> {
        self.policy.greedy(observation, upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Primitive steps per probe rollout (the period of level 1).
    pub steps: usize,
    pub resets: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 4,
            resets: 32,
            seed: 0,
        }
    }
}

/// Labels the subpolicy behind each upper action by the majority outcome of
/// `resets` rollouts of `steps` primitive steps from fresh resets.
pub fn subpolicy_probe<A: SubpolicyActor>(
    actor: &mut A,
    env: &EnvConfig,
    upper_actions: usize,
    config: ProbeConfig,
) -> Result<Vec<ProbeLabel>> {
    let EnvConfig::OverCooked(env) = env else {
        return Err(Error::Invalid("the subpolicy probe needs an OverCooked environment".into()));
    };
    (0..upper_actions)
        .map(|upper| probe_one(actor, env, upper, config))
        .collect()
}

fn probe_one<A: SubpolicyActor>(
    actor: &mut A,
    env: &OverCookedConfig,
    upper: usize,
    config: ProbeConfig,
) -> Result<ProbeLabel> {
    let mut moves: BTreeMap<(isize, isize), usize> = BTreeMap::new();
    let mut still: BTreeMap<[Leg; LEGS], usize> = BTreeMap::new();
    for r in 0..config.resets {
        let seed = seeding::derive_seed(config.seed, Stream::Episodes, &[r as u64]);
        let mut state = overcooked::overcooked_reset(env, seed);
        let start = state.body();
        for step in 0..config.steps {
            if state.is_done() {
                break;
            }
            let obs = overcooked::overcooked_render(&state, env.encoding);
            let action = actor.act(obs.data(), upper, step)?;
            overcooked::overcooked_step(env, &mut state, action)?;
        }
        let end = state.body();
        let delta = (end.0 as isize - start.0 as isize, end.1 as isize - start.1 as isize);
        if delta == (0, 0) {
            *still.entry(state.legs()).or_insert(0) += 1;
        } else {
            *moves.entry(delta).or_insert(0) += 1;
        }
    }
    let majority = |count: usize| 2 * count > config.resets;
    for d in Direction::ALL {
        if moves.get(&d.delta()).is_some_and(|&c| majority(c)) {
            return Ok(ProbeLabel::from_direction(d));
        }
    }
    if still.values().any(|&c| majority(c)) {
        return Ok(ProbeLabel::Stay);
    }
    Ok(ProbeLabel::Other)
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub seed: u64,
    pub step: u64,
    pub key: String,
    pub value: f64,
}

/// Append-only line-delimited JSON writer.
pub struct MetricsWriter {
    file: fs::File,
}

impl MetricsWriter {
    pub fn append(path: &Path) -> Result<Self> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { file })
    }

    pub fn write(&mut self, record: &MetricRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).map_err(|e| Error::Invalid(e.to_string()))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| Error::Invalid(format!("metrics write failed: {e}")))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file
            .flush()
            .map_err(|e| Error::Invalid(format!("metrics flush failed: {e}")))
    }
}

/// Reads every complete line; a trailing partial line (concurrent append) is ignored.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut lines = BufReader::new(file).lines().peekable();
    while let Some(line) = lines.next() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(_) if lines.peek().is_none() => break,
            Err(e) => return Err(error::Error::format(path, e)),
        }
    }
    Ok(out)
}

pub const SMOOTHING: f64 = 0.99;
pub const CSV_HEADER: &str = "step,value,seed";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub value: f64,
    pub seed: u64,
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(out, "{},{:?},{}", p.step, p.value, p.seed);
    }
    out
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Invalid(format!("curve CSV must start with {CSV_HEADER:?}")));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let bad = || Error::Invalid(format!("bad curve CSV row {l:?}"));
            let mut f = l.split(',');
            let step = f.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let value = f.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let seed = f.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            Ok(CurvePoint { step, value, seed })
        })
        .collect()
}

/// Exponential moving average with factor `SMOOTHING`, seeded by the first value.
pub fn smooth(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(a) => SMOOTHING * a + (1.0 - SMOOTHING) * v,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Self-contained line chart: one faint raw trace per seed plus its smoothed curve.
pub fn render_svg(title: &str, points: &[CurvePoint]) -> String {
    let (w, h, margin) = (640.0, 400.0, 50.0);
    let mut by_seed: BTreeMap<u64, Vec<(u64, f64)>> = BTreeMap::new();
    for p in points {
        by_seed.entry(p.seed).or_default().push((p.step, p.value));
    }
    let finite = points.iter().filter(|p| p.value.is_finite());
    let x_max = finite.clone().map(|p| p.step).max().unwrap_or(1).max(1) as f64;
    let mut y_min = finite.clone().map(|p| p.value).fold(f64::INFINITY, f64::min);
    let mut y_max = finite.map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
    if !y_min.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let sx = |s: u64| margin + s as f64 / x_max * (w - 2.0 * margin);
    let sy = |v: f64| h - margin - (v - y_min) / (y_max - y_min) * (h - 2.0 * margin);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (margin, h - margin, w - margin, margin);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let label = |svg: &mut String, x: f64, y: f64, anchor: &str, text: String| {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{text}</text>"#
        );
    };
    label(&mut svg, x0, y0 + 15.0, "start", "0".into());
    label(&mut svg, x1, y0 + 15.0, "end", format!("{}", x_max as u64));
    label(&mut svg, x0 - 5.0, y0, "end", format!("{y_min:.3}"));
    label(&mut svg, x0 - 5.0, y1 + 4.0, "end", format!("{y_max:.3}"));
    for (i, (seed, series)) in by_seed.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let polyline = |values: &[f64]| -> String {
            series
                .iter()
                .zip(values)
                .filter(|(_, v)| v.is_finite())
                .map(|((s, _), v)| format!("{:.2},{:.2}", sx(*s), sy(*v)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let raw: Vec<f64> = series.iter().map(|(_, v)| *v).collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-seed="{seed}" fill="none" stroke="{color}" stroke-opacity="0.3" stroke-width="1" points="{}"/>"#,
            polyline(&raw)
        );
        let _ = writeln!(
            svg,
            r#"<polyline data-seed="{seed}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            polyline(&smooth(&raw))
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// File-name-safe form of a metric key.
pub fn metric_file_stem(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_DIR: &str = "report";

/// Writes `report/<metric>.csv` and `report/<metric>.svg` for every metric
/// in the run's stream. Returns the metric keys in order.
pub fn emit_report(run_dir: &Path) -> Result<Vec<String>> {
    let records = read_metrics(&run_dir.join(METRICS_FILE))?;
    let mut by_key: BTreeMap<String, Vec<CurvePoint>> = BTreeMap::new();
    for r in records {
        by_key.entry(r.key).or_default().push(CurvePoint {
            step: r.step,
            value: r.value,
            seed: r.seed,
        });
    }
    let out_dir = run_dir.join(REPORT_DIR);
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    if by_key.is_empty() {
        by_key.insert("episode_reward".into(), Vec::new());
    }
    for (key, points) in &by_key {
        let stem = metric_file_stem(key);
        let csv = curve_csv(points);
        let csv_path = out_dir.join(format!("{stem}.csv"));
        fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
        // rendered from the CSV text so re-ingesting it gives the same chart
        let svg = render_svg(key, &parse_curve_csv(&csv)?);
        let svg_path = out_dir.join(format!("{stem}.svg"));
        fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    }
    Ok(by_key.into_keys().collect())
}
