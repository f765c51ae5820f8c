//! Small numeric helpers shared across modules.

/// Neumaier-compensated accumulator. Centroids and energy sums go through this
/// so round trips stay at the 1e-12 level for particle counts up to ~64.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub(crate) fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Formats a float with 17 significant digits, enough to round-trip any f64.
pub(crate) fn g17(x: f64) -> String {
    format!("{:.16e}", x)
}
