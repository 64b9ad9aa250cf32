//! Range-Doppler spectrograms and the three-channel network input tensor.
//!
//! The beat signal is cut into non-overlapping ramp-length windows. Up-ramp
//! and down-ramp windows go to separate spectrograms whose columns are the
//! one-sided FFT moduli of the windows, in time order.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::class::VehicleClass;
use crate::error::{Error, Result};
use crate::radar_model::{BeatSignal, RadarParams, RampPolarity};

/// Plans one FFT size and reuses it for every window.
pub struct FftModulus {
    fft: Arc<dyn Fft<f64>>,
    size: usize,
}

impl FftModulus {
    pub fn new(size: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(size);
        Self { fft, size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// Full two-sided transform of the zero-padded window.
    pub fn spectrum(&self, window: &[f64]) -> Result<Vec<Complex<f64>>> {
        if window.len() > self.size {
            return Err(Error::WindowTooLong {
                len: window.len(),
                fft_size: self.size,
            });
        }
        let mut buf: Vec<Complex<f64>> = window.iter().map(|&x| Complex::new(x, 0.0)).collect();
        buf.resize(self.size, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        Ok(buf)
    }

    /// One-sided modulus `|X[k]|`, `k = 0..=size/2`, rectangular window.
    pub fn column(&self, window: &[f64]) -> Result<Vec<f64>> {
        let spec = self.spectrum(window)?;
        Ok(spec[..self.bins()].iter().map(|z| z.norm()).collect())
    }
}

pub fn fft_modulus(window: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    FftModulus::new(fft_size).column(window)
}

/// Splits a beat signal into alternating up/down ramp windows.
///
/// A trailing partial window is dropped.
pub fn segment_ramps(sig: &BeatSignal) -> Result<(Vec<&[f64]>, Vec<&[f64]>)> {
    let spr = sig.samples_per_ramp;
    if spr == 0 || sig.samples.len() < 2 * spr {
        return Err(Error::SignalTooShort {
            samples: sig.samples.len(),
            needed: 2 * spr,
        });
    }
    let mut up = Vec::new();
    let mut down = Vec::new();
    for (i, window) in sig.samples.chunks_exact(spr).enumerate() {
        match sig.polarity_of_ramp(i) {
            RampPolarity::Up => up.push(window),
            RampPolarity::Down => down.push(window),
        }
    }
    Ok((up, down))
}

/// FFT-modulus matrix, `freq_bins` rows by `num_columns` time columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Row-major: `values[bin * num_columns + column]`.
    pub values: Vec<f64>,
    pub freq_bins: usize,
    pub num_columns: usize,
    pub bin_hz: f64,
    pub ramp_polarity: RampPolarity,
}

impl Spectrogram {
    fn from_columns(columns: &[Vec<f64>], freq_bins: usize, bin_hz: f64, pol: RampPolarity) -> Self {
        let num_columns = columns.len();
        let mut values = vec![0.0; freq_bins * num_columns];
        for (j, col) in columns.iter().enumerate() {
            for (k, &v) in col.iter().enumerate() {
                values[k * num_columns + j] = v;
            }
        }
        Self {
            values,
            freq_bins,
            num_columns,
            bin_hz,
            ramp_polarity: pol,
        }
    }

    pub fn get(&self, bin: usize, column: usize) -> f64 {
        self.values[bin * self.num_columns + column]
    }

    pub fn column(&self, column: usize) -> Vec<f64> {
        (0..self.freq_bins).map(|k| self.get(k, column)).collect()
    }

    /// Bin with the largest modulus in a column; lowest bin wins ties.
    pub fn peak_bin(&self, column: usize) -> usize {
        let mut best = 0;
        for k in 1..self.freq_bins {
            if self.get(k, column) > self.get(best, column) {
                best = k;
            }
        }
        best
    }

    pub fn to_pgm(&self, log_scale: bool) -> Vec<u8> {
        export_pgm(&self.values, self.freq_bins, self.num_columns, log_scale)
    }
}

pub fn build_spectrograms(sig: &BeatSignal, p: &RadarParams) -> Result<(Spectrogram, Spectrogram)> {
    let (up_w, down_w) = segment_ramps(sig)?;
    let fft = FftModulus::new(p.fft_size);
    let bin_hz = sig.sample_rate / p.fft_size as f64;
    let columns = |windows: &[&[f64]]| -> Result<Vec<Vec<f64>>> {
        windows.iter().map(|w| fft.column(w)).collect()
    };
    let up = Spectrogram::from_columns(&columns(&up_w)?, fft.bins(), bin_hz, RampPolarity::Up);
    let down = Spectrogram::from_columns(&columns(&down_w)?, fft.bins(), bin_hz, RampPolarity::Down);
    Ok((up, down))
}

/// Channel-major `channels x height x width` tensor of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct RdTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub label: Option<VehicleClass>,
}

impl RdTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
            label: None,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[self.index(c, i, j)]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_pgm(&self, c: usize, log_scale: bool) -> Vec<u8> {
        let values: Vec<f64> = self.channel(c).iter().map(|&v| v as f64).collect();
        export_pgm(&values, self.height, self.width, log_scale)
    }
}

/// Target shape of the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorLayout {
    /// Frequency rows kept from bin 0 upward; extra rows are zero.
    pub height: usize,
    /// Time columns after right zero-padding.
    pub width: usize,
    /// Drop columns beyond `width` instead of failing.
    #[serde(default)]
    pub crop: bool,
}

impl TensorLayout {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            crop: false,
        }
    }
}

/// Stacks up, down and their average into a zero-padded tensor of
/// `freq_bins x target_width`.
pub fn build_tensor(up: &Spectrogram, down: &Spectrogram, target_width: usize) -> Result<RdTensor> {
    build_tensor_with(up, down, TensorLayout::new(up.freq_bins, target_width))
}

pub fn build_tensor_with(up: &Spectrogram, down: &Spectrogram, layout: TensorLayout) -> Result<RdTensor> {
    if up.freq_bins != down.freq_bins || up.num_columns.abs_diff(down.num_columns) > 1 {
        return Err(Error::shape(
            (up.freq_bins, up.num_columns),
            (down.freq_bins, down.num_columns),
        ));
    }
    let width = up.num_columns.max(down.num_columns);
    if width > layout.width && !layout.crop {
        return Err(Error::PadOverflow {
            width,
            target: layout.width,
        });
    }
    let mut t = RdTensor::zeros(3, layout.height, layout.width);
    let rows = up.freq_bins.min(layout.height);
    for (c, s) in [up, down].into_iter().enumerate() {
        let cols = s.num_columns.min(layout.width);
        for i in 0..rows {
            for j in 0..cols {
                let idx = t.index(c, i, j);
                t.data[idx] = s.get(i, j) as f32;
            }
        }
    }
    let n = layout.height * layout.width;
    let (first, rest) = t.data.split_at_mut(n);
    let (second, third) = rest.split_at_mut(n);
    for ((avg, &a), &b) in third.iter_mut().zip(first.iter()).zip(second.iter()) {
        *avg = (a + b) / 2.0;
    }
    Ok(t)
}

/// Beat signal to tensor: spectrograms, channel stacking and padding.
pub fn signal_to_tensor(sig: &BeatSignal, p: &RadarParams, layout: TensorLayout) -> Result<RdTensor> {
    let (up, down) = build_spectrograms(sig, p)?;
    let mut t = build_tensor_with(&up, &down, layout)?;
    t.label = sig.label;
    Ok(t)
}

/// Elementwise mean of equally shaped tensors, accumulated in `f64`.
pub fn compute_mean_tensor<'a, I>(tensors: I) -> Result<RdTensor>
where
    I: IntoIterator<Item = &'a RdTensor>,
{
    let mut iter = tensors.into_iter();
    let first = iter.next().ok_or(Error::Empty("mean of no tensors"))?;
    let mut acc: Vec<f64> = first.data.iter().map(|&v| v as f64).collect();
    let mut count = 1usize;
    for t in iter {
        if t.shape() != first.shape() {
            return Err(Error::shape(first.shape(), t.shape()));
        }
        for (a, &v) in acc.iter_mut().zip(&t.data) {
            *a += v as f64;
        }
        count += 1;
    }
    let mut mean = RdTensor::zeros(first.channels, first.height, first.width);
    for (m, a) in mean.data.iter_mut().zip(&acc) {
        *m = (a / count as f64) as f32;
    }
    Ok(mean)
}

pub fn mean_normalize(t: &RdTensor, mean: &RdTensor) -> Result<RdTensor> {
    if t.shape() != mean.shape() {
        return Err(Error::shape(mean.shape(), t.shape()));
    }
    let mut out = t.clone();
    for (o, &m) in out.data.iter_mut().zip(&mean.data) {
        *o -= m;
    }
    Ok(out)
}

/// Renders a `rows x cols` row-major matrix as a binary PGM (P5) image.
///
/// Row 0 (frequency bin 0) ends up at the bottom of the image. Values are
/// min-max scaled to 0..=255; with `log_scale` they are first mapped through
/// `20 log10(|v| + 1e-12)`. A constant matrix renders black.
pub fn export_pgm(values: &[f64], rows: usize, cols: usize, log_scale: bool) -> Vec<u8> {
    let mapped: Vec<f64> = if log_scale {
        values.iter().map(|v| 20.0 * (v.abs() + 1e-12).log10()).collect()
    } else {
        values.to_vec()
    };
    let min = mapped.iter().copied().fold(f64::INFINITY, f64::min);
    let max = mapped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;

    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.reserve(rows * cols);
    for r in (0..rows).rev() {
        for c in 0..cols {
            let v = mapped[r * cols + c];
            let px = if span > 0.0 {
                ((v - min) / span * 255.0).round() as u8
            } else {
                0
            };
            out.push(px);
        }
    }
    out
}
