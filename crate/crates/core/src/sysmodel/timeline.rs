//! Dependency-respecting execution timeline with memory-interface
//! bandwidth sharing.

use serde::{Deserialize, Serialize};

use crate::workload::ApplicationModel;

/// One layer execution to place on the timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub layer: usize,
    /// Index of the executing instance (hardware-genome position).
    pub instance: usize,
    pub mi: usize,
    /// Uncontended execution time in cycles.
    pub duration: f64,
    pub dram_bytes: f64,
}

impl Job {
    /// Package-memory bandwidth the job needs to run at full speed.
    pub fn demand(&self) -> f64 {
        if self.dram_bytes > 0.0 {
            self.dram_bytes / self.duration
        } else {
            0.0
        }
    }
}

/// A piece of one layer's execution at constant memory bandwidth. A layer
/// slowed down by contention may span several consecutive segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledSegment {
    pub layer: usize,
    pub instance: usize,
    pub mi: usize,
    pub start: f64,
    pub end: f64,
    /// Bytes per cycle drawn from the memory interface.
    pub demand: f64,
    pub dilated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    /// Sorted by start, then layer.
    pub segments: Vec<ScheduledSegment>,
    /// Indexed by layer.
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub latency: f64,
    /// Whether bandwidth sharing changed the nominal schedule.
    pub dilated: bool,
}

/// Relative slack when comparing demand against bandwidth.
const BANDWIDTH_TOL: f64 = 1e-12;

/// Schedules `jobs` (given in software-genome order, one per layer).
///
/// Each job starts once its dependencies and the previous job on the same
/// instance have finished. If the resulting nominal timeline never asks a
/// memory interface for more than `mi_bandwidth` bytes per cycle it is
/// returned as is. Otherwise the schedule is replayed as a fluid
/// simulation: whenever the jobs active on an interface together demand
/// more than its bandwidth, each of them progresses at rate
/// `bandwidth / total demand` (a temporal dilation by `total / bandwidth`),
/// and later start times follow from the stretched end times. Jobs without
/// memory traffic are never slowed.
pub fn schedule(am: &ApplicationModel, jobs: &[Job], mi_bandwidth: f64) -> Timeline {
    let n = am.num_layers();
    let nominal = nominal(am, jobs);
    if over_budget(jobs, &nominal.0, &nominal.1, mi_bandwidth).is_none() {
        let mut segments: Vec<ScheduledSegment> = jobs
            .iter()
            .map(|j| ScheduledSegment {
                layer: j.layer,
                instance: j.instance,
                mi: j.mi,
                start: nominal.0[j.layer],
                end: nominal.1[j.layer],
                demand: j.demand(),
                dilated: false,
            })
            .collect();
        sort_segments(&mut segments);
        let latency = nominal.1.iter().copied().fold(0.0, f64::max);
        debug_assert_eq!(nominal.0.len(), n);
        return Timeline {
            segments,
            start: nominal.0,
            end: nominal.1,
            latency,
            dilated: false,
        };
    }
    fluid(am, jobs, mi_bandwidth)
}

fn sort_segments(segments: &mut [ScheduledSegment]) {
    segments.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.layer.cmp(&b.layer)));
}

/// Predecessor of each job on its instance, by job position.
fn instance_prev(jobs: &[Job]) -> Vec<Option<usize>> {
    let mut last: Vec<Option<usize>> = Vec::new();
    jobs.iter()
        .enumerate()
        .map(|(i, j)| {
            if last.len() <= j.instance {
                last.resize(j.instance + 1, None);
            }
            last[j.instance].replace(i)
        })
        .collect()
}

fn nominal(am: &ApplicationModel, jobs: &[Job]) -> (Vec<f64>, Vec<f64>) {
    let n = am.num_layers();
    let mut start = vec![0.0; n];
    let mut end = vec![0.0; n];
    let prev = instance_prev(jobs);
    for (i, j) in jobs.iter().enumerate() {
        let mut s = prev[i].map_or(0.0, |p| end[jobs[p].layer]);
        for &d in am.predecessors(j.layer) {
            s = f64::max(s, end[d]);
        }
        start[j.layer] = s;
        end[j.layer] = s + j.duration;
    }
    (start, end)
}

/// First elementary interval `(from, to, mi)` whose summed demand on an
/// interface exceeds the bandwidth.
fn over_budget(jobs: &[Job], start: &[f64], end: &[f64], bandwidth: f64) -> Option<(f64, f64, usize)> {
    let mut cuts: Vec<f64> = jobs
        .iter()
        .flat_map(|j| [start[j.layer], end[j.layer]])
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let n_mi = jobs.iter().map(|j| j.mi + 1).max().unwrap_or(0);
    let mut load = vec![0.0; n_mi];
    for w in cuts.windows(2) {
        load.iter_mut().for_each(|l| *l = 0.0);
        for j in jobs {
            if start[j.layer] <= w[0] && end[j.layer] >= w[1] {
                load[j.mi] += j.demand();
            }
        }
        if let Some(mi) = load.iter().position(|&l| l > bandwidth * (1.0 + BANDWIDTH_TOL)) {
            return Some((w[0], w[1], mi));
        }
    }
    None
}

fn fluid(am: &ApplicationModel, jobs: &[Job], bandwidth: f64) -> Timeline {
    let n = am.num_layers();
    let prev = instance_prev(jobs);
    let mut pos_of = vec![usize::MAX; n];
    for (i, j) in jobs.iter().enumerate() {
        pos_of[j.layer] = i;
    }
    let n_mi = jobs.iter().map(|j| j.mi + 1).max().unwrap_or(0);
    let mut remaining: Vec<f64> = jobs.iter().map(|j| j.duration).collect();
    let mut started = vec![false; jobs.len()];
    let mut done = vec![false; jobs.len()];
    let mut start = vec![0.0; n];
    let mut end = vec![0.0; n];
    // Open piece per job: (piece start, rate).
    let mut open: Vec<Option<(f64, f64)>> = vec![None; jobs.len()];
    let mut segments = Vec::new();
    let mut n_done = 0;
    let mut t = 0.0;

    let ready = |i: usize, done: &[bool]| {
        prev[i].is_none_or(|p| done[p]) && am.predecessors(jobs[i].layer).iter().all(|&d| done[pos_of[d]])
    };

    while n_done < jobs.len() {
        for i in 0..jobs.len() {
            if !started[i] && ready(i, &done) {
                started[i] = true;
                start[jobs[i].layer] = t;
            }
        }
        let active: Vec<usize> = (0..jobs.len()).filter(|&i| started[i] && !done[i]).collect();
        debug_assert!(!active.is_empty(), "topological order always leaves a runnable job");
        let mut load = vec![0.0; n_mi];
        for &i in &active {
            load[jobs[i].mi] += jobs[i].demand();
        }
        let rate = |i: usize| {
            let l = load[jobs[i].mi];
            if jobs[i].demand() > 0.0 && l > bandwidth {
                bandwidth / l
            } else {
                1.0
            }
        };
        let (first, dt) = active
            .iter()
            .map(|&i| (i, remaining[i] / rate(i)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("active set is nonempty");
        let t_next = t + dt;
        for &i in &active {
            let r = rate(i);
            match open[i] {
                Some((_, pr)) if pr == r => {}
                Some((from, pr)) => {
                    segments.push(piece(&jobs[i], from, t, pr));
                    open[i] = Some((t, r));
                }
                None => open[i] = Some((t, r)),
            }
            remaining[i] -= dt * r;
            if i == first || remaining[i] <= jobs[i].duration * 1e-12 {
                done[i] = true;
                n_done += 1;
                end[jobs[i].layer] = t_next;
                let (from, pr) = open[i].take().expect("active job has an open piece");
                segments.push(piece(&jobs[i], from, t_next, pr));
            }
        }
        t = t_next;
    }
    sort_segments(&mut segments);
    Timeline {
        segments,
        start,
        latency: end.iter().copied().fold(0.0, f64::max),
        end,
        dilated: true,
    }
}

fn piece(job: &Job, from: f64, to: f64, rate: f64) -> ScheduledSegment {
    ScheduledSegment {
        layer: job.layer,
        instance: job.instance,
        mi: job.mi,
        start: from,
        end: to,
        demand: job.demand() * rate,
        dilated: rate < 1.0,
    }
}

/// Whether any elementary interval of `segments` draws more than
/// `bandwidth` (with relative tolerance `tol`) from one interface.
pub fn bandwidth_violation(segments: &[ScheduledSegment], bandwidth: f64, tol: f64) -> Option<(f64, f64, usize)> {
    let mut cuts: Vec<f64> = segments.iter().flat_map(|s| [s.start, s.end]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let n_mi = segments.iter().map(|s| s.mi + 1).max().unwrap_or(0);
    for w in cuts.windows(2) {
        let mut load = vec![0.0; n_mi];
        for s in segments {
            if s.start <= w[0] && s.end >= w[1] {
                load[s.mi] += s.demand;
            }
        }
        if let Some(mi) = load.iter().position(|&l| l > bandwidth * (1.0 + tol)) {
            return Some((w[0], w[1], mi));
        }
    }
    None
}
