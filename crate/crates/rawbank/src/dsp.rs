//! Spectral helpers: power-of-two FFT, Hamming window, power spectra.
//!
//! The transform sizes used here (512, 1024, 4096) are small enough that a
//! plain iterative radix-2 butterfly is well inside budget, and keeping it
//! in-tree means analysis output is bit-stable across platforms.

use std::f64::consts::PI;

/// In-place iterative radix-2 FFT. `re.len()` must be a power of two and
/// equal to `im.len()`; both are caller invariants.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len(), "re/im length mismatch");
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    if n <= 1 {
        return;
    }

    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i as u32).reverse_bits() >> (32 - bits);
        let j = j as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut cr = 1.0;
            let mut ci = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
        len <<= 1;
    }
}

/// Magnitude-squared spectrum of a real signal, zero-padded to `nfft`.
/// Returns `nfft/2 + 1` bins (DC through Nyquist).
pub fn power_spectrum(signal: &[f64], nfft: usize) -> Vec<f64> {
    assert!(nfft.is_power_of_two(), "nfft must be a power of two");
    assert!(signal.len() <= nfft, "signal longer than nfft");
    let mut re = vec![0.0; nfft];
    let mut im = vec![0.0; nfft];
    re[..signal.len()].copy_from_slice(signal);
    fft_in_place(&mut re, &mut im);
    (0..=nfft / 2)
        .map(|b| re[b] * re[b] + im[b] * im[b])
        .collect()
}

/// Periodic-symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    assert!(n >= 2, "window too short");
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}
