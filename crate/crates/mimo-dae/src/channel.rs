//! Rayleigh flat-fading channel generation, AWGN, and link-budget bookkeeping.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{svd, ComplexMatrix, SvdFactors};

/// The RNG used everywhere; a counter-based stream cipher keeps every draw
/// reproducible from a 64-bit seed regardless of platform.
pub type Rng64 = ChaCha12Rng;

/// Deterministically derive a child seed from a master seed and a stream tag.
///
/// Workers, rounds, and evaluation tasks each get their own stream so that
/// resuming or reordering work cannot change what any one stream produces.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0x9e37_79b9_7f4a_7c15);
    for &t in tags {
        state = splitmix64(state ^ t);
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> Rng64 {
    Rng64::seed_from_u64(seed)
}

/// One CN(0,1) draw: real and imaginary parts each N(0, 1/2).
pub fn sample_cn01(rng: &mut Rng64) -> Complex64 {
    let scale = 0.5f64.sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * scale, im * scale)
}

/// One channel draw together with its SVD factors and noise level.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: ComplexMatrix,
    pub svd: SvdFactors,
    /// Noise power per complex receive sample (equals the spectral density).
    pub n0: f64,
}

impl ChannelRealization {
    /// Per-sub-channel gain-to-noise ratios lambda_i^2 / N0.
    pub fn gamma(&self) -> Vec<f64> {
        self.svd.lambda.iter().map(|l| l * l / self.n0).collect()
    }

    pub fn with_noise(mut self, n0: f64) -> Self {
        self.n0 = n0;
        self
    }
}

/// Draw a 2x2 Rayleigh flat-fading channel with i.i.d. CN(0,1) entries.
///
/// The noise level is left at zero; callers set it per transmission via
/// [`ChannelRealization::with_noise`].
pub fn sample_channel(rng: &mut Rng64) -> ChannelRealization {
    let data: Vec<Complex64> = (0..4).map(|_| sample_cn01(rng)).collect();
    let h = ComplexMatrix::new(2, 2, data).expect("gaussian draws are finite");
    let factors = svd(&h).expect("svd of finite 2x2 cannot fail");
    ChannelRealization { h, svd: factors, n0: 0.0 }
}

/// y = H x + w with w i.i.d. CN(0, N0) per receive antenna.
pub fn apply_channel(
    h: &ComplexMatrix,
    x: &[Complex64],
    n0: f64,
    rng: &mut Rng64,
) -> Result<Vec<Complex64>> {
    if n0 < 0.0 || !n0.is_finite() {
        return Err(Error::InvalidInput(format!("noise power must be finite and >= 0, got {n0}")));
    }
    let mut y = h.mul_vec(x)?;
    if n0 > 0.0 {
        let sigma = (n0 / 2.0).sqrt();
        for yi in &mut y {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *yi += Complex64::new(re * sigma, im * sigma);
        }
    }
    Ok(y)
}

/// Total power, bits per transmission, and noise level of one link.
#[derive(Debug, Clone, Copy)]
pub struct LinkBudget {
    /// Total transmit power in Watts.
    pub power: f64,
    /// Bits per transmission.
    pub n_s: u32,
}

/// The quantities convert_link translates between, all in dB.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkQuantity {
    /// Noise spectral density in dBW.
    N0Db,
    /// SNR = P/N0 in dB.
    SnrDb,
    /// Energy per bit over noise density in dB.
    EbN0Db,
}

impl LinkBudget {
    pub fn new(power: f64, n_s: u32) -> Result<Self> {
        if !(power > 0.0) || !power.is_finite() {
            return Err(Error::InvalidInput(format!("power must be positive, got {power}")));
        }
        if n_s == 0 {
            return Err(Error::InvalidInput("bits per transmission must be >= 1".into()));
        }
        Ok(Self { power, n_s })
    }

    /// Convert `value` (in dB) between N0, SNR, and Eb/N0.
    ///
    /// SNR_dB = 10 log10(P/N0) and Eb/N0_dB = SNR_dB - 10 log10(N_s).
    pub fn convert(&self, value: f64, from: LinkQuantity, to: LinkQuantity) -> f64 {
        let p_db = 10.0 * self.power.log10();
        let ns_db = 10.0 * (self.n_s as f64).log10();
        let snr_db = match from {
            LinkQuantity::N0Db => p_db - value,
            LinkQuantity::SnrDb => value,
            LinkQuantity::EbN0Db => value + ns_db,
        };
        match to {
            LinkQuantity::N0Db => p_db - snr_db,
            LinkQuantity::SnrDb => snr_db,
            LinkQuantity::EbN0Db => snr_db - ns_db,
        }
    }

    /// Noise power in Watts for a target Eb/N0 in dB.
    pub fn n0_for_ebn0_db(&self, ebn0_db: f64) -> f64 {
        let n0_db = self.convert(ebn0_db, LinkQuantity::EbN0Db, LinkQuantity::N0Db);
        10f64.powf(n0_db / 10.0)
    }

    pub fn snr_db_for_ebn0_db(&self, ebn0_db: f64) -> f64 {
        self.convert(ebn0_db, LinkQuantity::EbN0Db, LinkQuantity::SnrDb)
    }
}
