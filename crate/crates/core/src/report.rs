//! Deterministic CSV renderings of run artifacts. Every function is a pure
//! string builder: identical inputs give byte-identical files regardless of
//! worker count or wall clock, so outputs can be compared by hash. Each
//! file opens with a schema line, then a fixed-order column header.

use crate::ddpg::{EpisodeLog, EpisodeStats};
use crate::env::DoneReason;
use crate::Real;
use std::fmt::Write as _;

pub const EVAL_SCHEMA: &str = "wildgrid-eval-v1";
pub const TRAIN_SCHEMA: &str = "wildgrid-train-v1";
pub const COMPARE_SCHEMA: &str = "wildgrid-compare-v1";
pub const HISTOGRAM_SCHEMA: &str = "wildgrid-histogram-v1";
pub const TRACE_SCHEMA: &str = "wildgrid-trace-v1";

/// Shortest round-trip decimal; negative zero normalized away.
fn num(x: Real) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x}")
}

fn reason(r: DoneReason) -> &'static str {
    match r {
        DoneReason::None => "running",
        DoneReason::Horizon => "horizon",
        DoneReason::NonConvergence => "non-convergence",
    }
}

/// Fraction of episodes that ended on a simulation-ending condition, as a
/// percentage.
pub fn pct_sim_ending(stats: &[EpisodeStats]) -> Real {
    if stats.is_empty() {
        return 0.0;
    }
    100.0 * stats.iter().filter(|s| s.ended_early).count() as Real / stats.len() as Real
}

pub fn mean_penalty(stats: &[EpisodeStats]) -> Real {
    if stats.is_empty() {
        return 0.0;
    }
    stats.iter().map(|s| s.total_penalty).sum::<Real>() / stats.len() as Real
}

/// Per-episode evaluation results plus a trailing summary row, where the
/// `ended_early` column carries the percentage of simulation-ending
/// episodes instead of a flag.
pub fn evaluation_csv(stats: &[EpisodeStats]) -> String {
    let mut out = format!("schema,{EVAL_SCHEMA}\n");
    out.push_str(
        "episode_number,total_penalty,load_loss,active_line_removal,wildfire,non_convergence,ended_early\n",
    );
    for (i, s) in stats.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            i + 1,
            num(s.total_penalty),
            num(s.r_sums[0]),
            num(s.r_sums[1]),
            num(s.r_sums[2]),
            num(s.r_sums[3]),
            u8::from(s.ended_early),
        );
    }
    if !stats.is_empty() {
        let n = stats.len() as Real;
        let mean = |f: &dyn Fn(&EpisodeStats) -> Real| stats.iter().map(|s| f(s)).sum::<Real>() / n;
        let _ = writeln!(
            out,
            "mean,{},{},{},{},{},{}",
            num(mean(&|s| s.total_penalty)),
            num(mean(&|s| s.r_sums[0])),
            num(mean(&|s| s.r_sums[1])),
            num(mean(&|s| s.r_sums[2])),
            num(mean(&|s| s.r_sums[3])),
            num(pct_sim_ending(stats)),
        );
    }
    out
}

/// Per-episode training log.
pub fn training_csv(log: &[EpisodeLog]) -> String {
    let mut out = format!("schema,{TRAIN_SCHEMA}\n");
    out.push_str(
        "episode,steps,total_penalty,load_loss,active_line_removal,wildfire,non_convergence,done_reason,wall_secs\n",
    );
    for e in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.episode,
            e.steps,
            num(e.total_penalty),
            num(e.r_sums[0]),
            num(e.r_sums[1]),
            num(e.r_sums[2]),
            num(e.r_sums[3]),
            reason(e.done_reason),
            num(e.wall_secs),
        );
    }
    out
}

/// One summary line per policy.
pub fn compare_csv(rows: &[(String, Vec<EpisodeStats>)]) -> String {
    let mut out = format!("schema,{COMPARE_SCHEMA}\n");
    out.push_str("policy,episodes,mean_penalty,pct_sim_ending\n");
    for (name, stats) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            name,
            stats.len(),
            num(mean_penalty(stats)),
            num(pct_sim_ending(stats)),
        );
    }
    out
}

const COMPONENTS: [&str; 5] =
    ["total_penalty", "load_loss", "active_line_removal", "wildfire", "non_convergence"];

fn component_value(s: &EpisodeStats, c: usize) -> Real {
    match c {
        0 => s.total_penalty,
        _ => s.r_sums[c - 1],
    }
}

/// Fixed-width histograms of each penalty component, with bin edges shared
/// across policies so rows are directly comparable.
pub fn histograms_csv(rows: &[(String, Vec<EpisodeStats>)], bins: usize) -> String {
    assert!(bins > 0, "need at least one bin");
    let mut out = format!("schema,{HISTOGRAM_SCHEMA}\n");
    out.push_str("component,policy,bin_lo,bin_hi,count\n");
    for (c, comp_name) in COMPONENTS.iter().enumerate() {
        let values: Vec<Real> = rows
            .iter()
            .flat_map(|(_, stats)| stats.iter().map(|s| component_value(s, c)))
            .collect();
        if values.is_empty() {
            continue;
        }
        let lo = values.iter().copied().fold(Real::INFINITY, Real::min);
        let hi = values.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let width = if hi > lo { (hi - lo) / bins as Real } else { 1.0 };
        for (name, stats) in rows {
            let mut counts = vec![0usize; bins];
            for s in stats {
                let v = component_value(s, c);
                let b = (((v - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            for (b, count) in counts.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    comp_name,
                    name,
                    num(lo + width * b as Real),
                    num(lo + width * (b + 1) as Real),
                    count,
                );
            }
        }
    }
    out
}

/// One row of a per-step episode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u32,
    pub burning_cells: usize,
    pub burned_out_cells: usize,
    pub nodes_on: usize,
    pub branches_on: usize,
    pub gens_on: usize,
    pub generation_mw: Real,
    pub unserved_mw: Real,
    pub reward_total: Real,
    pub load_loss: Real,
    pub active_line_removal: Real,
    pub wildfire: Real,
    pub non_convergence: Real,
    pub done_reason: DoneReason,
}

/// Per-step simulation trace with the reward breakdown.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("schema,{TRACE_SCHEMA}\n");
    out.push_str(
        "step,burning_cells,burned_out_cells,nodes_on,branches_on,gens_on,generation_mw,unserved_mw,\
         reward_total,load_loss,active_line_removal,wildfire,non_convergence,done_reason\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.burning_cells,
            r.burned_out_cells,
            r.nodes_on,
            r.branches_on,
            r.gens_on,
            num(r.generation_mw),
            num(r.unserved_mw),
            num(r.reward_total),
            num(r.load_loss),
            num(r.active_line_removal),
            num(r.wildfire),
            num(r.non_convergence),
            reason(r.done_reason),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stat(total: Real, r: [Real; 4], early: bool) -> EpisodeStats {
        EpisodeStats { seed: 0, steps: 10, total_penalty: total, r_sums: r, ended_early: early }
    }

    #[test]
    fn empty_evaluation_is_header_only() {
        let text = evaluation_csv(&[]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "schema,wildgrid-eval-v1");
        assert!(lines[1].starts_with("episode_number,total_penalty,load_loss"));
    }

    #[test]
    fn summary_row_holds_means_and_the_ending_percentage() {
        let stats = vec![
            stat(-10.0, [1.0, 0.0, 2.0, 0.0], false),
            stat(-30.0, [3.0, 0.0, 0.0, 100.0], true),
        ];
        let text = evaluation_csv(&stats);
        let last = text.lines().last().unwrap();
        assert_eq!(last, "mean,-20,2,0,1,50,50");
    }

    #[test]
    fn identical_inputs_render_identical_bytes() {
        let stats = vec![stat(-1.25, [0.5, 0.25, 0.0, 0.0], false)];
        assert_eq!(evaluation_csv(&stats), evaluation_csv(&stats));
        let rows = vec![("reactive".to_string(), stats)];
        assert_eq!(compare_csv(&rows), compare_csv(&rows));
        assert_eq!(histograms_csv(&rows, 4), histograms_csv(&rows, 4));
    }

    #[test]
    fn histogram_bins_cover_the_range_and_count_everything() {
        let rows = vec![(
            "p".to_string(),
            vec![
                stat(-1.0, [0.0; 4], false),
                stat(-2.0, [0.0; 4], false),
                stat(-4.0, [0.0; 4], true),
            ],
        )];
        let text = histograms_csv(&rows, 3);
        let total_rows: Vec<&str> =
            text.lines().filter(|l| l.starts_with("total_penalty,")).collect();
        assert_eq!(total_rows.len(), 3);
        assert_eq!(total_rows[0], "total_penalty,p,-4,-3,1");
        assert_eq!(total_rows[2], "total_penalty,p,-2,-1,2", "max value lands in the last bin");
        let counted: usize = total_rows
            .iter()
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(counted, 3);
    }

    #[test]
    fn negative_zero_never_appears() {
        let stats = vec![stat(-0.0, [0.0; 4], false)];
        let text = evaluation_csv(&stats);
        assert!(!text.contains("-0,"), "{text}");
    }

    #[test]
    fn trace_rows_render_in_order() {
        let row = TraceRow {
            step: 1,
            burning_cells: 4,
            burned_out_cells: 0,
            nodes_on: 3,
            branches_on: 3,
            gens_on: 1,
            generation_mw: 100.0,
            unserved_mw: 0.0,
            reward_total: -2.5,
            load_loss: 0.0,
            active_line_removal: 0.0,
            wildfire: 1.25,
            non_convergence: 0.0,
            done_reason: DoneReason::None,
        };
        let text = trace_csv(&[row]);
        assert!(text.ends_with("1,4,0,3,3,1,100,0,-2.5,0,0,1.25,0,running\n"));
    }
}
