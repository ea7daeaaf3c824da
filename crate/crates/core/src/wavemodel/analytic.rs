//! Constant-velocity 3D propagator `g(t, x) = delta(t - |x|/c) / |x|`, evaluated
//! on a time grid with FFT phase shifts (band-limited, subsample-exact delays).

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{check_dim, Error, Result};
use crate::linops::{CMatrix, CVector, LinearOperator, ScalarKind, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub nt: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(nt: usize, dt: f64) -> Result<Self> {
        if nt < 2 {
            return Err(Error::InvalidInput(format!("time grid needs nt >= 2, got {nt}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { nt, dt })
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nt).map(move |i| i as f64 * self.dt)
    }
}

/// A point source and its receivers (km), plus the recording grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    source_position: [f64; 3],
    receiver_positions: Vec<[f64; 3]>,
    time: TimeGrid,
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl Acquisition {
    pub fn new(source_position: [f64; 3], receiver_positions: Vec<[f64; 3]>, time: TimeGrid) -> Result<Self> {
        if receiver_positions.is_empty() {
            return Err(Error::InvalidInput("acquisition needs at least one receiver".into()));
        }
        for (i, xr) in receiver_positions.iter().enumerate() {
            if !xr.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("receiver {i} has non-finite coordinates")));
            }
            if distance(xr, &source_position) == 0.0 {
                return Err(Error::SingularGeometry(format!("receiver {i} coincides with the source")));
            }
            if receiver_positions[..i].iter().any(|other| other == xr) {
                return Err(Error::InvalidInput(format!("receiver {i} duplicates an earlier receiver")));
            }
        }
        Ok(Self {
            source_position,
            receiver_positions,
            time,
        })
    }

    /// Source at the origin, receivers on the x axis at the given offsets.
    pub fn inline(offsets: &[f64], time: TimeGrid) -> Result<Self> {
        Self::new([0.0; 3], offsets.iter().map(|&x| [x, 0.0, 0.0]).collect(), time)
    }

    pub fn source_position(&self) -> [f64; 3] {
        self.source_position
    }

    pub fn receiver_positions(&self) -> &[[f64; 3]] {
        &self.receiver_positions
    }

    pub fn n_receivers(&self) -> usize {
        self.receiver_positions.len()
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    /// Source-receiver distances `r_i`.
    pub fn offsets(&self) -> Vec<f64> {
        self.receiver_positions
            .iter()
            .map(|xr| distance(xr, &self.source_position))
            .collect()
    }
}

/// Receiver traces, stored receiver-major as one stacked vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_receivers: usize,
    nt: usize,
    samples: CVector,
}

impl Dataset {
    pub fn from_stacked(n_receivers: usize, nt: usize, samples: CVector) -> Result<Self> {
        check_dim("dataset samples", n_receivers * nt, samples.len())?;
        Ok(Self {
            n_receivers,
            nt,
            samples,
        })
    }

    pub fn zeros(n_receivers: usize, nt: usize) -> Self {
        Self {
            n_receivers,
            nt,
            samples: CVector::zeros(n_receivers * nt),
        }
    }

    pub fn n_receivers(&self) -> usize {
        self.n_receivers
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn stacked(&self) -> &CVector {
        &self.samples
    }

    pub fn into_stacked(self) -> CVector {
        self.samples
    }

    pub fn trace(&self, receiver: usize) -> &[C64] {
        &self.samples.as_slice()[receiver * self.nt..(receiver + 1) * self.nt]
    }

    pub fn norm(&self) -> f64 {
        self.samples.norm()
    }
}

/// `F(c)`: source wavelet on the time grid to receiver traces,
/// `trace_i(t) = q(t - r_i / c) / r_i`.
///
/// Traces are computed on a zero-padded FFT grid of at least twice the record
/// length and windowed back to `nt`, so the convolution is linear over the
/// record. The Nyquist bin uses the real part of the phase factor, which keeps
/// real inputs real.
pub struct ConstantVelocityPropagator {
    velocity: f64,
    nt: usize,
    dt: f64,
    offsets: Vec<f64>,
    nfft: usize,
    /// Per receiver transfer function `exp(-i w r / c) / r`.
    transfer: Vec<Vec<C64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ConstantVelocityPropagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstantVelocityPropagator")
            .field("velocity", &self.velocity)
            .field("nt", &self.nt)
            .field("dt", &self.dt)
            .field("offsets", &self.offsets)
            .field("nfft", &self.nfft)
            .finish()
    }
}

impl ConstantVelocityPropagator {
    pub fn new(velocity: f64, acq: &Acquisition) -> Result<Self> {
        if !(velocity > 0.0 && velocity.is_finite()) {
            return Err(Error::InvalidInput(format!("velocity must be positive, got {velocity}")));
        }
        let offsets = acq.offsets();
        if let Some(i) = offsets.iter().position(|r| *r == 0.0) {
            return Err(Error::SingularGeometry(format!("receiver {i} coincides with the source")));
        }
        let TimeGrid { nt, dt } = acq.time();
        let nfft = (2 * nt).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nfft);
        let ifft = planner.plan_fft_inverse(nfft);
        let nyquist = nfft / 2;
        let transfer = offsets
            .iter()
            .map(|&r| {
                let delay = r / velocity;
                (0..nfft)
                    .map(|k| {
                        let signed = if k <= nyquist { k as f64 } else { k as f64 - nfft as f64 };
                        let w = 2.0 * PI * signed / (nfft as f64 * dt);
                        let phase = if k == nyquist {
                            C64::new((w * delay).cos(), 0.0)
                        } else {
                            C64::from_polar(1.0, -w * delay)
                        };
                        phase / r
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            velocity,
            nt,
            dt,
            offsets,
            nfft,
            transfer,
            fft,
            ifft,
        })
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn n_receivers(&self) -> usize {
        self.offsets.len()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    fn spectrum(&self, signal: &[C64]) -> Vec<C64> {
        let mut buf = vec![C64::new(0.0, 0.0); self.nfft];
        buf[..signal.len()].copy_from_slice(signal);
        self.fft.process(&mut buf);
        buf
    }

    fn window_inverse(&self, mut spectrum: Vec<C64>, out: &mut [C64]) {
        self.ifft.process(&mut spectrum);
        let scale = 1.0 / self.nfft as f64;
        for (o, s) in out.iter_mut().zip(&spectrum) {
            *o = s * scale;
        }
    }
}

impl LinearOperator for ConstantVelocityPropagator {
    fn domain_dim(&self) -> usize {
        self.nt
    }

    fn range_dim(&self) -> usize {
        self.nt * self.offsets.len()
    }

    fn matvec(&self, q: &CVector) -> CVector {
        let source = self.spectrum(q.as_slice());
        let mut out = CVector::zeros(self.range_dim());
        for (i, transfer) in self.transfer.iter().enumerate() {
            let shifted: Vec<C64> = source.iter().zip(transfer).map(|(s, t)| s * t).collect();
            self.window_inverse(shifted, &mut out.as_mut_slice()[i * self.nt..(i + 1) * self.nt]);
        }
        out
    }

    fn rmatvec(&self, d: &CVector) -> CVector {
        let mut acc = vec![C64::new(0.0, 0.0); self.nfft];
        for (i, transfer) in self.transfer.iter().enumerate() {
            let spectrum = self.spectrum(&d.as_slice()[i * self.nt..(i + 1) * self.nt]);
            for ((a, s), t) in acc.iter_mut().zip(&spectrum).zip(transfer) {
                *a += s * t.conj();
            }
        }
        let mut out = CVector::zeros(self.nt);
        self.window_inverse(acc, out.as_mut_slice());
        out
    }

    fn scalar_kind(&self) -> ScalarKind {
        ScalarKind::Real
    }
}

/// `F(c) q` as receiver traces.
pub fn forward_f(c: f64, acq: &Acquisition, q: &CVector) -> Result<Dataset> {
    let op = ConstantVelocityPropagator::new(c, acq)?;
    if !q.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::InvalidInput("source wavelet has non-finite samples".into()));
    }
    let traces = op.apply(q)?;
    Dataset::from_stacked(acq.n_receivers(), acq.time().nt, traces)
}

/// `F(c)^* d`: traces advanced by `r_i / c`, scaled by `1 / r_i` and summed.
pub fn adjoint_f(c: f64, acq: &Acquisition, data: &Dataset) -> Result<CVector> {
    check_dim("dataset receivers", acq.n_receivers(), data.n_receivers())?;
    check_dim("dataset samples", acq.time().nt, data.nt())?;
    let op = ConstantVelocityPropagator::new(c, acq)?;
    op.adjoint_apply(data.stacked())
}

/// Dense `K(c) = F(c) F(c)^*`, assembled column by column from spikes.
pub fn kernel_matrix(c: f64, acq: &Acquisition) -> Result<CMatrix> {
    let op = ConstantVelocityPropagator::new(c, acq)?;
    let dim = op.range_dim();
    let mut k = CMatrix::zeros(dim, dim);
    let mut spike = CVector::zeros(dim);
    for j in 0..dim {
        spike[j] = C64::new(1.0, 0.0);
        let column = op.matvec(&op.rmatvec(&spike));
        k.set_column(j, &column);
        spike[j] = C64::new(0.0, 0.0);
    }
    Ok(k)
}

/// Receiver-pair correlation kernels `k(t, t', x_i, x_j)` as lag-indexed
/// traces: `panel(i, j)[lag] = K[(i, t_ref + lag), (j, t_ref)]` with the
/// reference sample at the middle of the record.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPanels {
    pub velocity: f64,
    pub dt: f64,
    pub reference_sample: usize,
    /// Lag in samples for each entry of a panel.
    pub lags: Vec<i64>,
    /// `panels[i][j]`, real because `F` maps real signals to real signals.
    pub panels: Vec<Vec<Vec<f64>>>,
    pub offsets: Vec<f64>,
}

impl KernelPanels {
    pub fn n_receivers(&self) -> usize {
        self.panels.len()
    }

    pub fn panel(&self, i: usize, j: usize) -> &[f64] {
        &self.panels[i][j]
    }

    /// Predicted event lag `(r_i - r_j) / c` in seconds.
    pub fn expected_lag(&self, i: usize, j: usize) -> f64 {
        (self.offsets[i] - self.offsets[j]) / self.velocity
    }

    /// Lag (seconds) of the largest-magnitude sample of panel `(i, j)`.
    pub fn peak_lag(&self, i: usize, j: usize) -> f64 {
        let panel = self.panel(i, j);
        let (idx, _) = panel
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (k, v)| if v.abs() > acc.1 { (k, v.abs()) } else { acc });
        self.lags[idx] as f64 * self.dt
    }

    pub fn peak_value(&self, i: usize, j: usize) -> f64 {
        self.panel(i, j).iter().fold(0.0, |acc: f64, v| if v.abs() > acc.abs() { *v } else { acc })
    }
}

/// Kernel panels of `F F^*` at velocity `c`: applies `F F^*` to a spike at the
/// reference sample of each receiver trace and reads off every receiver's
/// response.
pub fn kernel_k(c: f64, acq: &Acquisition) -> Result<KernelPanels> {
    let op = ConstantVelocityPropagator::new(c, acq)?;
    let nt = op.nt();
    let nr = op.n_receivers();
    let reference = nt / 2;
    let lags: Vec<i64> = (0..nt).map(|t| t as i64 - reference as i64).collect();
    let mut panels = vec![vec![Vec::new(); nr]; nr];
    for j in 0..nr {
        let mut spike = CVector::zeros(nr * nt);
        spike[j * nt + reference] = C64::new(1.0, 0.0);
        let column = op.matvec(&op.rmatvec(&spike));
        for (i, row) in panels.iter_mut().enumerate() {
            row[j] = column.as_slice()[i * nt..(i + 1) * nt].iter().map(|z| z.re).collect();
        }
    }
    Ok(KernelPanels {
        velocity: c,
        dt: acq.time().dt,
        reference_sample: reference,
        lags,
        panels,
        offsets: op.offsets().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{dot_test, random_complex_vector};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> TimeGrid {
        TimeGrid::new(512, 0.004).unwrap()
    }

    fn spike(nt: usize, at: usize) -> CVector {
        let mut q = CVector::zeros(nt);
        q[at] = C64::new(1.0, 0.0);
        q
    }

    fn argmax(trace: &[C64]) -> (usize, f64) {
        trace
            .iter()
            .enumerate()
            .map(|(i, z)| (i, z.re))
            .fold((0, f64::MIN), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
    }

    #[test]
    fn spike_arrives_at_offset_over_velocity() {
        let acq = Acquisition::inline(&[1.0], grid()).unwrap();
        let data = forward_f(2.0, &acq, &spike(512, 0)).unwrap();
        let (idx, peak) = argmax(data.trace(0));
        assert_relative_eq!(idx as f64 * 0.004, 0.5, epsilon = 1e-12);
        assert_relative_eq!(peak, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn paper_geometry_arrival_times() {
        let acq = Acquisition::inline(&[0.8, 1.0, 1.2], grid()).unwrap();
        let data = forward_f(2.0, &acq, &spike(512, 0)).unwrap();
        for (i, expected) in [0.4, 0.5, 0.6].iter().enumerate() {
            let (idx, peak) = argmax(data.trace(i));
            assert_relative_eq!(idx as f64 * 0.004, *expected, epsilon = 1e-12);
            assert_relative_eq!(peak, 1.0 / [0.8, 1.0, 1.2][i], epsilon = 1e-12);
        }
    }

    #[test]
    fn doubling_offset_halves_amplitude() {
        let acq = Acquisition::inline(&[0.3, 0.6], grid()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = random_complex_vector(512, &mut rng).map(|z| C64::new(z.re, 0.0));
        for i in 300..512 {
            q[i] = C64::new(0.0, 0.0);
        }
        let data = forward_f(3.0, &acq, &q).unwrap();
        // Delay 0.1 s = 25 samples for r, 50 samples for 2r.
        let near = data.trace(0);
        let far = data.trace(1);
        for t in 60..500 {
            assert_relative_eq!(far[t].re, 0.5 * near[t - 25].re, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_is_linear() {
        let acq = Acquisition::inline(&[0.8, 1.0, 1.2], grid()).unwrap();
        let op = ConstantVelocityPropagator::new(1.7, &acq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q1 = random_complex_vector(512, &mut rng);
        let q2 = random_complex_vector(512, &mut rng);
        let (a, b) = (C64::new(0.3, -1.2), C64::new(2.0, 0.5));
        let lhs = op.matvec(&(&q1 * a + &q2 * b));
        let rhs = op.matvec(&q1) * a + op.matvec(&q2) * b;
        assert!((&lhs - &rhs).norm() <= 1e-12 * rhs.norm());
    }

    #[test]
    fn adjoint_passes_dot_test() {
        let acq = Acquisition::inline(&[0.8, 1.0, 1.2], grid()).unwrap();
        for c in [1.5, 1.8, 2.0, 2.37] {
            let op = ConstantVelocityPropagator::new(c, &acq).unwrap();
            assert!(dot_test(&op, 10, 11) <= 1e-10);
        }
    }

    #[test]
    fn adjoint_undoes_delay() {
        let acq = Acquisition::inline(&[1.0], grid()).unwrap();
        let data = forward_f(2.0, &acq, &spike(512, 0)).unwrap();
        let back = adjoint_f(2.0, &acq, &data).unwrap();
        let (idx, _) = argmax(back.as_slice());
        assert_eq!(idx, 0);
        let zero = adjoint_f(2.0, &acq, &Dataset::zeros(1, 512)).unwrap();
        assert_eq!(zero, CVector::zeros(512));
    }

    #[test]
    fn rejects_receiver_at_source() {
        assert!(matches!(
            Acquisition::inline(&[0.0, 1.0], grid()),
            Err(Error::SingularGeometry(_))
        ));
        assert!(TimeGrid::new(1, 0.1).is_err());
        let acq = Acquisition::inline(&[1.0], grid()).unwrap();
        assert!(forward_f(0.0, &acq, &spike(512, 0)).is_err());
    }

    #[test]
    fn kernel_panel_events() {
        let acq = Acquisition::inline(&[0.8, 1.0, 1.2], grid()).unwrap();
        let panels = kernel_k(2.0, &acq).unwrap();
        for i in 0..3 {
            assert_relative_eq!(panels.peak_lag(i, i), 0.0);
            assert_relative_eq!(panels.peak_value(i, i), 1.0 / (panels.offsets[i] * panels.offsets[i]), epsilon = 1e-12);
        }
        assert_relative_eq!(panels.expected_lag(2, 0), 0.2, epsilon = 1e-12);
        assert!((panels.peak_lag(2, 0) - 0.2).abs() <= 0.004);
        assert_relative_eq!(panels.peak_value(2, 0), 1.0 / (0.8 * 1.2), epsilon = 1e-12);
    }

    #[test]
    fn kernel_panels_are_time_reversed_transposes() {
        let acq = Acquisition::inline(&[0.8, 1.0, 1.2], grid()).unwrap();
        for c in [2.0, 1.8] {
            let panels = kernel_k(c, &acq).unwrap();
            let reference = panels.reference_sample as i64;
            for i in 0..3 {
                for j in 0..3 {
                    let peak = panels.peak_value(i, j).abs();
                    for (idx, lag) in panels.lags.iter().enumerate() {
                        let mirrored = reference - lag;
                        if !(0..512).contains(&mirrored) || lag.abs() > 200 {
                            continue;
                        }
                        let a = panels.panel(i, j)[idx];
                        let b = panels.panel(j, i)[mirrored as usize];
                        assert!((a - b).abs() <= 1e-2 * peak, "c={c} ({i},{j}) lag {lag}: {a} vs {b}");
                    }
                }
            }
        }
    }
}
