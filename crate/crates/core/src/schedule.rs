//! Maps a training iteration to a modulation intensity (kernel size) and a
//! pipeline level.
//!
//! The schedule decays the kernel size from `initial_kernel` at iteration 0 to
//! 1 (identity) at `cutoff_iteration`; past the cutoff no filtering happens.
//! Levels 1..n-1 cover the filtered phase, the last level is the unfiltered
//! tail up to `total_iterations`.

use thiserror::Error;

use crate::freq_filter::FilterKind;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("initial kernel must be odd and >= 3, got {0}")]
    BadInitialKernel(usize),
    #[error("cutoff iteration must be > 0")]
    ZeroCutoff,
    #[error("total iterations {0} must be >= cutoff iteration {1}")]
    TotalBeforeCutoff(u64, u64),
    #[error("level boundaries must be strictly increasing and end at the cutoff: {0}")]
    BadBoundaries(String),
    #[error("step sizes must be odd, >= 1, one per boundary interval: {0}")]
    BadStepSizes(String),
}

/// Decay families for the kernel-size curve. Shapes are interpretations of
/// the usual annealing curves; the step family is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleFamily {
    Step,
    Linear,
    Cosine,
    /// Cosine with 2 restarts over the cutoff window (3 decay cycles).
    CosineRestart,
    /// size(t) = initial * exp(-5 t / cutoff), reaching ~0.7% of the initial
    /// value at the cutoff before odd rounding.
    Exponential,
}

impl ScheduleFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleFamily::Step => "step",
            ScheduleFamily::Linear => "linear",
            ScheduleFamily::Cosine => "cosine",
            ScheduleFamily::CosineRestart => "cosine_restart",
            ScheduleFamily::Exponential => "exponential",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "step" => Some(ScheduleFamily::Step),
            "linear" => Some(ScheduleFamily::Linear),
            "cosine" => Some(ScheduleFamily::Cosine),
            "cosine_restart" => Some(ScheduleFamily::CosineRestart),
            "exponential" => Some(ScheduleFamily::Exponential),
            _ => None,
        }
    }

    pub const ALL: [ScheduleFamily; 5] = [
        ScheduleFamily::Step,
        ScheduleFamily::Linear,
        ScheduleFamily::Cosine,
        ScheduleFamily::CosineRestart,
        ScheduleFamily::Exponential,
    ];
}

/// Round to the nearest integer, bump even values up by one, floor at 1.
/// Symmetric convolution windows need odd sizes.
pub fn round_to_odd(value: f64) -> usize {
    let r = value.round().max(1.0) as usize;
    if r % 2 == 0 {
        r + 1
    } else {
        r
    }
}

/// Iteration -> (kernel size, level) mapping for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySchedule {
    family: ScheduleFamily,
    filter: FilterKind,
    initial_kernel: usize,
    cutoff_iteration: u64,
    total_iterations: u64,
    /// Strictly increasing, last element equals the cutoff. The k-th interval
    /// [boundary[k-1], boundary[k]) is pipeline level k+1's filtered phase.
    level_boundaries: Vec<u64>,
    /// Per-interval kernel sizes for the step family.
    step_sizes: Vec<usize>,
}

impl FrequencySchedule {
    pub const DEFAULT_INITIAL_KERNEL: usize = 15;
    pub const DEFAULT_CUTOFF: u64 = 12_000;
    pub const DEFAULT_TOTAL: u64 = 30_000;

    /// Build a schedule with explicit boundaries and optional per-interval
    /// step sizes. When `step_sizes` is `None` they decay geometrically from
    /// `initial_kernel` down to 3 (which reproduces 15, 9, 5, 3 for the
    /// default four intervals).
    pub fn new(
        family: ScheduleFamily,
        filter: FilterKind,
        initial_kernel: usize,
        cutoff_iteration: u64,
        total_iterations: u64,
        level_boundaries: Vec<u64>,
        step_sizes: Option<Vec<usize>>,
    ) -> Result<Self, ScheduleError> {
        if initial_kernel < 3 || initial_kernel % 2 == 0 {
            return Err(ScheduleError::BadInitialKernel(initial_kernel));
        }
        if cutoff_iteration == 0 {
            return Err(ScheduleError::ZeroCutoff);
        }
        if total_iterations < cutoff_iteration {
            return Err(ScheduleError::TotalBeforeCutoff(total_iterations, cutoff_iteration));
        }
        if level_boundaries.is_empty()
            || level_boundaries.windows(2).any(|w| w[0] >= w[1])
            || *level_boundaries.last().unwrap() != cutoff_iteration
        {
            return Err(ScheduleError::BadBoundaries(format!(
                "{level_boundaries:?} with cutoff {cutoff_iteration}"
            )));
        }
        let step_sizes = match step_sizes {
            Some(sizes) => {
                if sizes.len() != level_boundaries.len()
                    || sizes.iter().any(|s| *s < 1 || s % 2 == 0)
                {
                    return Err(ScheduleError::BadStepSizes(format!("{sizes:?}")));
                }
                sizes
            }
            None => derive_step_sizes(initial_kernel, level_boundaries.len()),
        };
        Ok(FrequencySchedule {
            family,
            filter,
            initial_kernel,
            cutoff_iteration,
            total_iterations,
            level_boundaries,
            step_sizes,
        })
    }

    /// Evenly spaced boundaries over the cutoff, `intervals` of them.
    pub fn with_even_boundaries(
        family: ScheduleFamily,
        filter: FilterKind,
        initial_kernel: usize,
        cutoff_iteration: u64,
        total_iterations: u64,
        intervals: usize,
    ) -> Result<Self, ScheduleError> {
        assert!(intervals >= 1);
        let boundaries = (1..=intervals as u64)
            .map(|i| cutoff_iteration * i / intervals as u64)
            .collect();
        Self::new(
            family,
            filter,
            initial_kernel,
            cutoff_iteration,
            total_iterations,
            boundaries,
            None,
        )
    }

    /// The paper-default step schedule: mean filter, initial kernel 15,
    /// plateaus (15, 9, 5, 3) over boundaries (3000, 6000, 9000, 12000), then
    /// unfiltered until 30000.
    pub fn default_step() -> Self {
        Self::with_even_boundaries(
            ScheduleFamily::Step,
            FilterKind::Mean,
            Self::DEFAULT_INITIAL_KERNEL,
            Self::DEFAULT_CUTOFF,
            Self::DEFAULT_TOTAL,
            4,
        )
        .expect("default schedule is valid")
    }

    pub fn family(&self) -> ScheduleFamily {
        self.family
    }

    pub fn filter(&self) -> FilterKind {
        self.filter
    }

    pub fn initial_kernel(&self) -> usize {
        self.initial_kernel
    }

    pub fn cutoff_iteration(&self) -> u64 {
        self.cutoff_iteration
    }

    pub fn total_iterations(&self) -> u64 {
        self.total_iterations
    }

    pub fn level_boundaries(&self) -> &[u64] {
        &self.level_boundaries
    }

    pub fn step_sizes(&self) -> &[usize] {
        &self.step_sizes
    }

    /// Number of pipeline levels: one per filtered interval plus the
    /// unfiltered tail.
    pub fn level_count(&self) -> usize {
        self.level_boundaries.len() + 1
    }

    /// Kernel size active at an iteration: an odd integer in
    /// [1, initial_kernel], equal to 1 for every iteration past the cutoff.
    pub fn kernel_size_at(&self, iteration: u64) -> usize {
        if iteration >= self.cutoff_iteration {
            return 1;
        }
        let t = iteration as f64 / self.cutoff_iteration as f64;
        let k0 = self.initial_kernel as f64;
        let raw = match self.family {
            ScheduleFamily::Step => {
                let idx = self.level_boundaries.partition_point(|b| *b <= iteration);
                return self.step_sizes[idx];
            }
            ScheduleFamily::Linear => k0 + (1.0 - k0) * t,
            ScheduleFamily::Cosine => {
                1.0 + (k0 - 1.0) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
            ScheduleFamily::CosineRestart => {
                let cycles = 3.0;
                let pos = t * cycles;
                let frac = pos - pos.floor();
                1.0 + (k0 - 1.0) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            ScheduleFamily::Exponential => k0 * (-5.0 * t).exp(),
        };
        round_to_odd(raw).min(self.initial_kernel)
    }

    /// Active pipeline level (1-based). Returns `level_count` (the unfiltered
    /// level) for every iteration at or past the cutoff.
    pub fn level_at(&self, iteration: u64) -> usize {
        self.level_boundaries.partition_point(|b| *b <= iteration) + 1
    }

    /// Iterations at which the model is saved: the last iteration before each
    /// level transition plus the final training iteration. Duplicates collapse
    /// (a schedule whose cutoff equals the total has a single snapshot).
    pub fn snapshot_iterations(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.level_boundaries.iter().map(|b| b - 1).collect();
        out.push(self.total_iterations - 1);
        out.dedup();
        out
    }
}

fn derive_step_sizes(initial: usize, intervals: usize) -> Vec<usize> {
    if intervals == 1 {
        return vec![initial];
    }
    let k0 = initial as f64;
    let k_end = 3.0f64.min(k0);
    (0..intervals)
        .map(|i| {
            let f = i as f64 / (intervals - 1) as f64;
            round_to_odd(k0 * (k_end / k0).powf(f)).min(initial)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default() -> FrequencySchedule {
        FrequencySchedule::default_step()
    }

    #[test]
    fn default_plateaus_match_design() {
        assert_eq!(default().step_sizes(), &[15, 9, 5, 3]);
        assert_eq!(default().level_boundaries(), &[3000, 6000, 9000, 12000]);
    }

    #[test]
    fn step_kernel_sizes_at_key_iterations() {
        let s = default();
        assert_eq!(s.kernel_size_at(0), 15);
        assert_eq!(s.kernel_size_at(2999), 15);
        assert_eq!(s.kernel_size_at(3000), 9);
        assert_eq!(s.kernel_size_at(9000), 3);
        assert_eq!(s.kernel_size_at(12_000), 1);
        assert_eq!(s.kernel_size_at(29_999), 1);
    }

    #[test]
    fn every_family_reaches_identity_at_cutoff() {
        for family in ScheduleFamily::ALL {
            let s = FrequencySchedule::with_even_boundaries(
                family,
                FilterKind::Mean,
                15,
                12_000,
                30_000,
                4,
            )
            .unwrap();
            assert_eq!(s.kernel_size_at(0), 15, "{family:?}");
            assert_eq!(s.kernel_size_at(12_000), 1, "{family:?}");
        }
    }

    #[test]
    fn linear_midpoint_rounds_odd() {
        let s = FrequencySchedule::with_even_boundaries(
            ScheduleFamily::Linear,
            FilterKind::Mean,
            15,
            12_000,
            30_000,
            4,
        )
        .unwrap();
        // Midpoint of the 15 -> 1 ramp is 8, which rounds up to 9.
        assert_eq!(s.kernel_size_at(6000), 9);
    }

    #[test]
    fn kernel_size_is_odd_in_range_and_monotone() {
        for family in ScheduleFamily::ALL {
            let s = FrequencySchedule::with_even_boundaries(
                family,
                FilterKind::Mean,
                15,
                12_000,
                30_000,
                4,
            )
            .unwrap();
            let mut prev = usize::MAX;
            for it in (0..=13_000).step_by(13) {
                let k = s.kernel_size_at(it);
                assert!(k % 2 == 1 && (1..=15).contains(&k));
                if family != ScheduleFamily::CosineRestart {
                    assert!(k <= prev, "{family:?} increased at {it}");
                    prev = k;
                }
            }
        }
    }

    #[test]
    fn cosine_restart_restarts() {
        let s = FrequencySchedule::with_even_boundaries(
            ScheduleFamily::CosineRestart,
            FilterKind::Mean,
            15,
            12_000,
            30_000,
            4,
        )
        .unwrap();
        // Just after the first restart (t = cutoff/3) the size jumps back up.
        assert!(s.kernel_size_at(4000) > s.kernel_size_at(3999));
    }

    #[test]
    fn levels_progress_and_saturate() {
        let s = default();
        assert_eq!(s.level_at(0), 1);
        assert_eq!(s.level_at(2999), 1);
        assert_eq!(s.level_at(3000), 2);
        assert_eq!(s.level_at(12_000), 5);
        assert_eq!(s.level_at(29_999), 5);
        // Non-decreasing and surjective onto 1..=5 over the run.
        let mut seen = [false; 5];
        let mut prev = 0;
        for it in 0..30_000 {
            let l = s.level_at(it);
            assert!(l >= prev);
            prev = l;
            seen[l - 1] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn exactly_four_filtered_plateaus_by_default() {
        let s = default();
        let mut plateaus = std::collections::BTreeSet::new();
        for it in 0..s.cutoff_iteration() {
            plateaus.insert(s.kernel_size_at(it));
        }
        assert_eq!(plateaus.len(), 4);
    }

    #[test]
    fn snapshot_iterations_examples() {
        assert_eq!(default().snapshot_iterations(), vec![2999, 5999, 8999, 11_999, 29_999]);

        let degenerate = FrequencySchedule::new(
            ScheduleFamily::Step,
            FilterKind::Mean,
            15,
            300,
            300,
            vec![300],
            None,
        )
        .unwrap();
        assert_eq!(degenerate.snapshot_iterations(), vec![299]);

        let custom = FrequencySchedule::new(
            ScheduleFamily::Step,
            FilterKind::Mean,
            15,
            200,
            300,
            vec![100, 200],
            None,
        )
        .unwrap();
        assert_eq!(custom.snapshot_iterations(), vec![99, 199, 299]);
        assert_eq!(custom.level_count(), 3);
    }

    #[test]
    fn invalid_schedules_rejected() {
        let mk = |initial, cutoff, total, bounds: Vec<u64>| {
            FrequencySchedule::new(
                ScheduleFamily::Step,
                FilterKind::Mean,
                initial,
                cutoff,
                total,
                bounds,
                None,
            )
        };
        assert!(mk(4, 100, 200, vec![100]).is_err()); // even kernel
        assert!(mk(1, 100, 200, vec![100]).is_err()); // too small
        assert!(mk(15, 100, 50, vec![100]).is_err()); // total < cutoff
        assert!(mk(15, 100, 200, vec![50, 40, 100]).is_err()); // not increasing
        assert!(mk(15, 100, 200, vec![50, 90]).is_err()); // last != cutoff
    }

    #[test]
    fn derived_step_sizes_for_other_initials() {
        assert_eq!(derive_step_sizes(31, 4), vec![31, 15, 7, 3]);
        assert_eq!(derive_step_sizes(3, 4), vec![3, 3, 3, 3]);
        assert_eq!(derive_step_sizes(7, 1), vec![7]);
    }

    #[test]
    fn round_to_odd_rule() {
        assert_eq!(round_to_odd(8.0), 9);
        assert_eq!(round_to_odd(8.4), 9);
        assert_eq!(round_to_odd(7.5), 9); // round half away from zero -> 8 -> 9
        assert_eq!(round_to_odd(7.4), 7);
        assert_eq!(round_to_odd(0.2), 1);
        assert_eq!(round_to_odd(-3.0), 1);
    }
}
