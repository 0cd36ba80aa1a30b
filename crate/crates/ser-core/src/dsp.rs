//! Spectral kernels: radix-2 FFT magnitude spectra and the orthonormal DCT-II
//! used by the cepstral front end.

use std::f64::consts::PI;

/// Transform size for all spectral analysis; 25 ms frames at 16 kHz (400
/// samples) are zero-padded up to this length.
pub const N_FFT: usize = 512;

/// In-place iterative radix-2 FFT. Both slices must have the same power-of-two length.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len(), "mismatched fft buffers");
    assert!(n.is_power_of_two(), "fft length must be a power of two");

    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let (w_re, w_im) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let mut cur_re = 1.0;
            let mut cur_im = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Magnitude spectrum of a real frame: `n_fft/2 + 1` bins. The frame is
/// zero-padded (or truncated) to `n_fft` samples.
pub fn magnitude_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    let copy = frame.len().min(n_fft);
    re[..copy].copy_from_slice(&frame[..copy]);
    fft_in_place(&mut re, &mut im);
    (0..=n_fft / 2)
        .map(|k| (re[k] * re[k] + im[k] * im[k]).sqrt())
        .collect()
}

/// Orthonormal DCT-II: `c_k = s_k * sum_j x_j cos(pi k (j + 1/2) / M)` with
/// `s_0 = sqrt(1/M)` and `s_k = sqrt(2/M)`. Returns the first `n_out` coefficients.
pub fn dct2_orthonormal(input: &[f64], n_out: usize) -> Vec<f64> {
    let m = input.len();
    assert!(m >= 1 && n_out <= m, "dct output longer than input");
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / m as f64).sqrt()
        } else {
            (2.0 / m as f64).sqrt()
        };
        let mut acc = 0.0;
        for (j, &x) in input.iter().enumerate() {
            acc += x * (PI * k as f64 * (j as f64 + 0.5) / m as f64).cos();
        }
        out.push(scale * acc);
    }
    out
}
