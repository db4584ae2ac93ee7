//! When to recompute the spectral basis.

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RebuildPolicy {
    /// Rebuild before every solve.
    Constant,
    /// Rebuild when the GMRES count drifts more than `threshold_pct` percent
    /// from the reference count. With `warm` the reference is the lowest count
    /// seen since the last build.
    Heuristic { threshold_pct: f64, warm: bool },
}

/// `|now − reference| / reference > threshold_pct / 100`, or `forced`.
pub fn should_rebuild_basis(reference: usize, now: usize, threshold_pct: f64, forced: bool) -> bool {
    if forced {
        return true;
    }
    let r = reference.max(1) as f64;
    (now as f64 - r).abs() / r > threshold_pct / 100.0
}

#[derive(Clone, Debug)]
pub struct PolicyState {
    pub policy: RebuildPolicy,
    reference: Option<usize>,
    last: Option<usize>,
    pub builds: usize,
}

impl PolicyState {
    pub fn new(policy: RebuildPolicy) -> Self {
        Self {
            policy,
            reference: None,
            last: None,
            builds: 0,
        }
    }

    /// Decides before a solve, from the count of the previous one.
    pub fn needs_rebuild(&self, forced: bool) -> bool {
        match (self.policy, self.reference, self.last) {
            (RebuildPolicy::Constant, ..) => true,
            (_, None, _) | (_, _, None) => true,
            (RebuildPolicy::Heuristic { threshold_pct, .. }, Some(r), Some(now)) => {
                should_rebuild_basis(r, now, threshold_pct, forced)
            }
        }
    }

    pub fn record_build(&mut self) {
        self.builds += 1;
        self.reference = None;
    }

    /// Iteration count of a completed solve.
    pub fn record_solve(&mut self, iterations: usize) {
        self.last = Some(iterations);
        self.reference = Some(match (self.policy, self.reference) {
            (_, None) => iterations,
            (RebuildPolicy::Heuristic { warm: true, .. }, Some(r)) => r.min(iterations),
            (_, Some(r)) => r,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule() {
        assert!(!should_rebuild_basis(40, 44, 20.0, false));
        assert!(should_rebuild_basis(40, 60, 20.0, false));
        assert!(should_rebuild_basis(40, 40, 20.0, true));
    }

    #[test]
    fn warm_reference_tracks_minimum() {
        let mut s = PolicyState::new(RebuildPolicy::Heuristic {
            threshold_pct: 50.0,
            warm: true,
        });
        assert!(s.needs_rebuild(false));
        s.record_build();
        s.record_solve(20);
        s.record_solve(6);
        s.record_solve(8);
        assert!(!s.needs_rebuild(false));
        s.record_solve(10);
        assert!(s.needs_rebuild(false));
    }

    #[test]
    fn cold_reference_stays_at_build_count() {
        let mut s = PolicyState::new(RebuildPolicy::Heuristic {
            threshold_pct: 50.0,
            warm: false,
        });
        s.record_build();
        s.record_solve(20);
        s.record_solve(12);
        assert!(!s.needs_rebuild(false));
        assert!(s.needs_rebuild(true));
        s.record_solve(8);
        assert!(s.needs_rebuild(false));
    }

    #[test]
    fn constant_always_rebuilds() {
        let mut s = PolicyState::new(RebuildPolicy::Constant);
        s.record_build();
        s.record_solve(5);
        assert!(s.needs_rebuild(false));
    }
}
