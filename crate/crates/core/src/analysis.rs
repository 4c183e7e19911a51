// SPDX-License-Identifier: MIT OR Apache-2.0

//! Summary statistics over run logs and plot-ready tables.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::fsum;
use crate::runner::{EntropyRow, RunLog, TemperatureResult, TracePoint};
use crate::seed::{self, stream};

/// Partial sums of a 0/1 action sequence.
pub fn cumulative_sum(actions: &[usize]) -> Result<Vec<u32>> {
    let mut acc = 0u32;
    actions
        .iter()
        .map(|&a| {
            if a > 1 {
                return Err(Error::NonBinaryActions { n_arms: a + 1 });
            }
            acc += a as u32;
            Ok(acc)
        })
        .collect()
}

/// Per-run cumulative action traces; two-armed bandits only.
pub fn cumulative_action_traces(logs: &[RunLog]) -> Result<Vec<Vec<u32>>> {
    if logs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    logs.iter()
        .map(|log| {
            let n_arms = log.header.bandit.means.len();
            if n_arms != 2 {
                return Err(Error::NonBinaryActions { n_arms });
            }
            cumulative_sum(&log.actions())
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    fsum(xs.iter().copied()) / xs.len() as f64
}

/// Order statistic at fraction `q` of sorted data, rounded down
/// (`round_up = false`) or up (`round_up = true`) to a rank.
fn rank_quantile(sorted: &[f64], q: f64, round_up: bool) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = if round_up { pos.ceil() } else { pos.floor() };
    sorted[i as usize]
}

/// 95% percentile bootstrap interval for the mean of `values`.
///
/// The replicate pool holds the sample mean plus `n_resamples` resampled
/// means; percentile ranks are rounded outward.
pub fn bootstrap_mean_ci(values: &[f64], n_resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = seed::rng(seed);
    let mut reps = Vec::with_capacity(n_resamples + 1);
    reps.push(mean(values));
    let mut buf = vec![0.0; values.len()];
    for _ in 0..n_resamples {
        for b in buf.iter_mut() {
            *b = values[rng.random_range(0..values.len())];
        }
        reps.push(mean(&buf));
    }
    reps.sort_by(f64::total_cmp);
    Ok((rank_quantile(&reps, 0.025, false), rank_quantile(&reps, 0.975, true)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyPoint {
    pub t: u32,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Runs that reached step `t`.
    pub n_runs: usize,
}

/// Mean entropy per timestep across runs, with bootstrap intervals over
/// runs. Step `t` averages over the runs that executed it.
pub fn entropy_over_time(logs: &[RunLog], n_resamples: usize, seed: u64) -> Result<Vec<EntropyPoint>> {
    if logs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let max_t = logs.iter().map(|l| l.steps.len()).max().unwrap_or(0);
    (1..=max_t as u32)
        .map(|t| {
            let hs: Vec<f64> = logs
                .iter()
                .filter_map(|l| l.steps.get(t as usize - 1).map(|s| s.entropy_nats))
                .collect();
            let (ci_low, ci_high) =
                bootstrap_mean_ci(&hs, n_resamples, seed::split(seed, stream::BOOTSTRAP, u64::from(t)))?;
            Ok(EntropyPoint {
                t,
                mean: mean(&hs),
                ci_low,
                ci_high,
                n_runs: hs.len(),
            })
        })
        .collect()
}

pub const BUNDLED_STOPWORDS: &str = include_str!("../fixtures/stopwords_en.txt");
pub const BUNDLED_STOPWORDS_ID: &str = "stopwords-iso/en (1298 words)";

#[derive(Debug, Clone)]
pub struct Stopwords {
    pub id: String,
    words: HashSet<String>,
}

impl Stopwords {
    pub fn bundled() -> Self {
        Self::from_words(BUNDLED_STOPWORDS_ID, BUNDLED_STOPWORDS.lines())
    }

    pub fn from_words<I, S>(id: &str, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            id: id.to_owned(),
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Lowercased alphabetic runs of at least three characters that are not
/// stopwords.
pub fn content_words<'a>(text: &'a str, stopwords: &'a Stopwords) -> impl Iterator<Item = String> + 'a {
    text.split(|c: char| !c.is_alphabetic())
        .map(str::to_lowercase)
        .filter(move |w| w.chars().count() >= 3 && !stopwords.contains(w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordStat {
    pub word: String,
    pub count_a: u64,
    pub count_b: u64,
    pub freq_a: f64,
    pub freq_b: f64,
    pub ratio_a_over_b: f64,
    pub ratio_b_over_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordFrequencyReport {
    /// Sorted by `ratio_a_over_b` descending, then word.
    pub words: Vec<WordStat>,
    pub total_a: u64,
    pub total_b: u64,
    pub stopwords_id: String,
}

impl WordFrequencyReport {
    pub fn get(&self, word: &str) -> Option<&WordStat> {
        self.words.iter().find(|w| w.word == word)
    }
}

fn count_words<S: AsRef<str>>(texts: &[S], stopwords: &Stopwords) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for t in texts {
        for w in content_words(t.as_ref(), stopwords) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Relative word frequencies between two corpora.
///
/// `freq = count / total` per corpus and
/// `ratio_a_over_b = (freq_a + 1/total_a) / (freq_b + 1/total_b)`.
pub fn word_frequency_report<S: AsRef<str>>(
    corpus_a: &[S],
    corpus_b: &[S],
    stopwords: &Stopwords,
) -> Result<WordFrequencyReport> {
    let a = count_words(corpus_a, stopwords);
    let b = count_words(corpus_b, stopwords);
    let total_a: u64 = a.values().sum();
    let total_b: u64 = b.values().sum();
    if total_a == 0 {
        return Err(Error::EmptyCorpus("a"));
    }
    if total_b == 0 {
        return Err(Error::EmptyCorpus("b"));
    }
    let (na, nb) = (total_a as f64, total_b as f64);
    let vocab: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let mut words: Vec<WordStat> = vocab
        .into_iter()
        .map(|w| {
            let ca = a.get(w).copied().unwrap_or(0);
            let cb = b.get(w).copied().unwrap_or(0);
            let (fa, fb) = (ca as f64 / na, cb as f64 / nb);
            let sa = fa + 1.0 / na;
            let sb = fb + 1.0 / nb;
            WordStat {
                word: w.clone(),
                count_a: ca,
                count_b: cb,
                freq_a: fa,
                freq_b: fb,
                ratio_a_over_b: sa / sb,
                ratio_b_over_a: sb / sa,
            }
        })
        .collect();
    words.sort_by(|x, y| {
        y.ratio_a_over_b
            .total_cmp(&x.ratio_a_over_b)
            .then_with(|| x.word.cmp(&y.word))
    });
    Ok(WordFrequencyReport {
        words,
        total_a,
        total_b,
        stopwords_id: stopwords.id.clone(),
    })
}

/// Assistant responses from an uncontrolled example interaction.
pub const DEFAULT_RESPONSES: &str = include_str!("../fixtures/words_default.jsonl");
/// Assistant responses from an example interaction under steering.
pub const STEERED_RESPONSES: &str = include_str!("../fixtures/words_steered.jsonl");

/// Parse a corpus file: each nonblank line is a JSON string or, failing
/// that, raw text.
pub fn parse_corpus(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<String>(l).unwrap_or_else(|_| l.to_owned()))
        .collect()
}

/// Every completion sampled during the given runs.
pub fn corpus_from_logs(logs: &[RunLog]) -> Vec<String> {
    logs.iter()
        .flat_map(|l| l.steps.iter().flat_map(|s| s.completions.iter().cloned()))
        .collect()
}

/// A table row with a fixed, documented column set.
pub trait PlotRow: Serialize + DeserializeOwned {
    const COLUMNS: &'static [&'static str];
    const DESCRIPTION: &'static str;
}

impl PlotRow for EntropyRow {
    const COLUMNS: &'static [&'static str] = &["layer", "beta", "mean_entropy", "valid_fraction"];
    const DESCRIPTION: &'static str = "mean action entropy (nats) and valid-completion fraction per layer and multiplier";
}

impl PlotRow for EntropyPoint {
    const COLUMNS: &'static [&'static str] = &["t", "mean", "ci_low", "ci_high", "n_runs"];
    const DESCRIPTION: &'static str = "mean action entropy (nats) per timestep with 95% bootstrap interval over runs";
}

impl PlotRow for WordStat {
    const COLUMNS: &'static [&'static str] =
        &["word", "count_a", "count_b", "freq_a", "freq_b", "ratio_a_over_b", "ratio_b_over_a"];
    const DESCRIPTION: &'static str = "smoothed relative word frequencies between corpus a and corpus b";
}

impl PlotRow for TracePoint {
    const COLUMNS: &'static [&'static str] = &["index", "token", "probability", "n_valid"];
    const DESCRIPTION: &'static str = "probability of the target arm after each generated token";
}

/// One point of a cumulative action trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeRow {
    pub run_id: String,
    pub t: u32,
    pub cumulative: u32,
}

impl PlotRow for CumulativeRow {
    const COLUMNS: &'static [&'static str] = &["run_id", "t", "cumulative"];
    const DESCRIPTION: &'static str = "cumulative sum of chosen actions (0 or 1) per run and timestep";
}

pub fn cumulative_rows(logs: &[RunLog]) -> Result<Vec<CumulativeRow>> {
    let traces = cumulative_action_traces(logs)?;
    Ok(logs
        .iter()
        .zip(traces)
        .flat_map(|(log, trace)| {
            let id = log.header.run_id.clone();
            trace.into_iter().enumerate().map(move |(i, c)| CumulativeRow {
                run_id: id.clone(),
                t: i as u32 + 1,
                cumulative: c,
            })
        })
        .collect())
}

/// Behaviour summary of one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRow {
    pub temperature: f64,
    pub validity_rate: f64,
    pub n_runs: usize,
    pub n_all_invalid: usize,
    pub mean_steps: f64,
}

impl PlotRow for TemperatureRow {
    const COLUMNS: &'static [&'static str] = &["temperature", "validity_rate", "n_runs", "n_all_invalid", "mean_steps"];
    const DESCRIPTION: &'static str =
        "valid-completion rate, runs ended by all-invalid steps, and mean executed steps per temperature";
}

pub fn temperature_rows(results: &[TemperatureResult]) -> Vec<TemperatureRow> {
    results
        .iter()
        .map(|r| TemperatureRow {
            temperature: r.temperature,
            validity_rate: r.validity_rate(),
            n_runs: r.runs.len(),
            n_all_invalid: r.n_all_invalid(),
            mean_steps: if r.runs.is_empty() {
                0.0
            } else {
                r.runs.iter().map(|l| l.steps.len()).sum::<usize>() as f64 / r.runs.len() as f64
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotFormat {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
struct JsonTable<R> {
    description: String,
    columns: Vec<String>,
    rows: Vec<R>,
}

/// CSV: a `#` comment record naming the columns, a header row, then rows.
pub fn plot_csv<R: PlotRow>(rows: &[R]) -> Result<String> {
    let mut out = format!("# {}: {}\n", R::COLUMNS.join(","), R::DESCRIPTION).into_bytes();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
        w.write_record(R::COLUMNS)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(out).expect("csv output is UTF-8"))
}

pub fn plot_json<R: PlotRow>(rows: &[R]) -> Result<String>
where
    R: Clone,
{
    Ok(serde_json::to_string_pretty(&JsonTable {
        description: R::DESCRIPTION.to_owned(),
        columns: R::COLUMNS.iter().map(|c| (*c).to_owned()).collect(),
        rows: rows.to_vec(),
    })?)
}

pub fn emit_plot_data<R: PlotRow + Clone>(rows: &[R], path: &Path, format: PlotFormat) -> Result<()> {
    let text = match format {
        PlotFormat::Csv => plot_csv(rows)?,
        PlotFormat::Json => plot_json(rows)? + "\n",
    };
    fs::File::create(path)?.write_all(text.as_bytes())?;
    Ok(())
}

pub fn parse_plot_csv<R: PlotRow>(text: &str) -> Result<Vec<R>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != R::COLUMNS {
        return Err(Error::InvalidArgument(format!("unexpected columns {header:?}")));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn parse_plot_json<R: PlotRow>(text: &str) -> Result<Vec<R>> {
    let t: JsonTable<R> = serde_json::from_str(text)?;
    Ok(t.rows)
}

pub fn read_plot_data<R: PlotRow>(path: &Path) -> Result<Vec<R>> {
    let text = fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        parse_plot_json(&text)
    } else {
        parse_plot_csv(&text)
    }
}
