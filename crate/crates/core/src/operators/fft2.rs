use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Unnormalized 2-D FFT over a row-major `h x w` complex plane.
#[derive(Clone)]
pub(crate) struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fft2({}x{})", self.h, self.w)
    }
}

impl Fft2 {
    pub(crate) fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.h * self.w
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse: `inverse(forward(x)) = h * w * x`.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.len());
        let scratch_len = rows
            .get_inplace_scratch_len()
            .max(cols.get_inplace_scratch_len());
        WORK.with(|cell| {
            let (t, scratch) = &mut *cell.borrow_mut();
            let zero = Complex64::new(0.0, 0.0);
            t.resize(self.len(), zero);
            scratch.resize(scratch_len.max(scratch.len()), zero);
            rows.process_with_scratch(data, &mut scratch[..scratch_len]);
            transpose(data, t, self.h, self.w);
            cols.process_with_scratch(t, &mut scratch[..scratch_len]);
            transpose(t, data, self.w, self.h);
        });
    }
}

type Work = (Vec<Complex64>, Vec<Complex64>);

thread_local! {
    // Transpose buffer and FFT scratch reused across calls on one thread.
    static WORK: RefCell<Work> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// `dst` (`w x h`) = transpose of `src` (`h x w`).
fn transpose(src: &[Complex64], dst: &mut [Complex64], h: usize, w: usize) {
    for r in 0..h {
        for c in 0..w {
            dst[c * h + r] = src[r * w + c];
        }
    }
}
