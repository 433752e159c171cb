use multilora::sim::{run, MetricsReport, RunError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::plan::{ExperimentPlan, PointKey};
use crate::stats::{Interval, StatsSummary};

/// Metrics of one seeded repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub repetition: u32,
    pub seed: u64,
    pub plr_percent: f64,
    pub apd_s: Option<f64>,
    pub jitter_s: Option<f64>,
    pub sent: u64,
    pub received: u64,
}

impl Sample {
    fn new(repetition: u32, seed: u64, r: &MetricsReport) -> Self {
        Sample {
            repetition,
            seed,
            plr_percent: r.plr_percent,
            apd_s: r.apd_s,
            jitter_s: r.jitter_s,
            sent: r.sent,
            received: r.received,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summaries {
    pub plr: StatsSummary,
    /// Over repetitions that delivered at least one packet.
    pub apd: Option<StatsSummary>,
    pub jitter: Option<StatsSummary>,
}

pub fn summarize(samples: &[Sample], interval: Interval) -> Option<Summaries> {
    let plr: Vec<f64> = samples.iter().map(|s| s.plr_percent).collect();
    let apd: Vec<f64> = samples.iter().filter_map(|s| s.apd_s).collect();
    let jitter: Vec<f64> = samples.iter().filter_map(|s| s.jitter_s).collect();
    Some(Summaries {
        plr: StatsSummary::from_samples(&plr, interval)?,
        apd: StatsSummary::from_samples(&apd, interval),
        jitter: StatsSummary::from_samples(&jitter, interval),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub key: PointKey,
    pub samples: Vec<Sample>,
    pub summary: Option<Summaries>,
    /// Set when a repetition failed; the point then carries no samples.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub plan: String,
    pub base_seed: u64,
    pub repetitions: u32,
    pub interval: Interval,
    pub points: Vec<PointResult>,
}

impl Results {
    pub fn failures(&self) -> impl Iterator<Item = &PointResult> {
        self.points.iter().filter(|p| p.error.is_some())
    }
}

/// Runs every repetition of every sweep point.
///
/// `threads` caps the worker count; `None` uses all cores. Output order is
/// independent of scheduling.
pub fn execute(
    plan: &ExperimentPlan,
    threads: Option<usize>,
) -> Result<Results, rayon::ThreadPoolBuildError> {
    let points = plan.points();
    let jobs: Vec<(usize, u32)> = (0..points.len())
        .flat_map(|p| (0..plan.plan.repetitions).map(move |r| (p, r)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        builder = builder.num_threads(k);
    }
    let pool = builder.build()?;
    let outcomes: Vec<Result<Sample, RunError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, rep)| {
                let s = plan.repetition(&points[p].1, rep);
                run(&s).map(|r| Sample::new(rep, s.rng_seed, &r))
            })
            .collect()
    });

    let mut outcomes = outcomes.into_iter();
    let interval = plan.plan.interval;
    let points = points
        .into_iter()
        .map(|(key, _)| {
            let mut samples = Vec::with_capacity(plan.plan.repetitions as usize);
            let mut error = None;
            for outcome in outcomes.by_ref().take(plan.plan.repetitions as usize) {
                match outcome {
                    Ok(s) => samples.push(s),
                    Err(e) => {
                        error.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            if error.is_some() {
                samples.clear();
            }
            PointResult {
                key,
                summary: summarize(&samples, interval),
                samples,
                error,
            }
        })
        .collect();
    Ok(Results {
        plan: plan.plan.name.clone(),
        base_seed: plan.plan.base_seed,
        repetitions: plan.plan.repetitions,
        interval,
        points,
    })
}
