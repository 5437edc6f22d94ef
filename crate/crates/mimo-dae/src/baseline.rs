//! Classical SVD-precoded transmission with water-filling and adaptive
//! BPSK/M-QAM bit loading.
//!
//! This is the comparison system: the channel is diagonalized by the SVD,
//! bits are split over the two sub-channels to minimize the predicted BER,
//! and detection is per-sub-channel minimum distance after the receiver
//! applies U^H.

use num_complex::Complex64;

use crate::channel::{apply_channel, ChannelRealization, Rng64};
use crate::error::{Error, Result};

/// Payload bit: +1 or -1.
pub type Bit = i8;

/// Binary-reflected Gray code of `n`.
pub fn gray_code(n: u32) -> u32 {
    n ^ (n >> 1)
}

/// Inverse of [`gray_code`].
pub fn gray_decode(g: u32) -> u32 {
    let mut n = g;
    let mut shift = 1;
    while (g >> shift) != 0 {
        n ^= g >> shift;
        shift += 1;
    }
    n
}

/// Q(x) = P(N(0,1) > x), via the complementary error function.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Supported constellations. All are unit average symbol energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    Bpsk,
    Qam4,
    Qam16,
    Qam64,
}

impl Modulation {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            1 => Ok(Self::Bpsk),
            2 => Ok(Self::Qam4),
            4 => Ok(Self::Qam16),
            6 => Ok(Self::Qam64),
            _ => Err(Error::InvalidInput(format!("no supported constellation carries {bits} bits"))),
        }
    }

    pub fn order(self) -> u32 {
        match self {
            Self::Bpsk => 2,
            Self::Qam4 => 4,
            Self::Qam16 => 16,
            Self::Qam64 => 64,
        }
    }

    pub fn bits_per_symbol(self) -> u32 {
        match self {
            Self::Bpsk => 1,
            Self::Qam4 => 2,
            Self::Qam16 => 4,
            Self::Qam64 => 6,
        }
    }

    /// Independent PAM dimensions: BPSK is real-only, QAM splits I/Q.
    fn dims(self) -> u32 {
        match self {
            Self::Bpsk => 1,
            _ => 2,
        }
    }

    fn bits_per_dim(self) -> u32 {
        self.bits_per_symbol() / self.dims()
    }

    fn levels_per_dim(self) -> u32 {
        1 << self.bits_per_dim()
    }

    /// Half-distance between adjacent PAM levels for unit symbol energy.
    fn dim_scale(self) -> f64 {
        let l = self.levels_per_dim() as f64;
        // Per-dimension energy d^2 (L^2 - 1)/3, summed over dims, equals 1.
        (3.0 / (self.dims() as f64 * (l * l - 1.0))).sqrt()
    }
}

fn pam_level(idx: u32, levels: u32, scale: f64) -> f64 {
    (2.0 * idx as f64 - (levels - 1) as f64) * scale
}

/// Nearest PAM level index with ties broken toward the higher level.
fn pam_nearest(value: f64, levels: u32, scale: f64) -> u32 {
    let raw = ((value / scale + (levels - 1) as f64) / 2.0 + 0.5).floor();
    raw.clamp(0.0, (levels - 1) as f64) as u32
}

/// Pack +-1 bits into an integer, MSB first (-1 -> 0, +1 -> 1).
pub fn bits_to_word(bits: &[Bit]) -> u32 {
    let mut word = 0u32;
    for &b in bits {
        word = (word << 1) | u32::from(b > 0);
    }
    word
}

/// Unpack an integer into +-1 bits, MSB first.
pub fn word_to_bits(word: u32, n_bits: u32, out: &mut Vec<Bit>) {
    for k in (0..n_bits).rev() {
        out.push(if (word >> k) & 1 == 1 { 1 } else { -1 });
    }
}

/// Map +-1 bits onto a Gray-labeled constellation point.
pub fn gray_modulate(bits: &[Bit], modulation: Modulation) -> Result<Complex64> {
    if bits.len() != modulation.bits_per_symbol() as usize {
        return Err(Error::DimensionMismatch(format!(
            "{:?} takes {} bits, got {}",
            modulation,
            modulation.bits_per_symbol(),
            bits.len()
        )));
    }
    let m_d = modulation.bits_per_dim() as usize;
    let levels = modulation.levels_per_dim();
    let scale = modulation.dim_scale();
    let i_idx = gray_decode(bits_to_word(&bits[..m_d]));
    let re = pam_level(i_idx, levels, scale);
    let im = if modulation.dims() == 2 {
        let q_idx = gray_decode(bits_to_word(&bits[m_d..]));
        pam_level(q_idx, levels, scale)
    } else {
        0.0
    };
    Ok(Complex64::new(re, im))
}

/// Minimum-distance detection of `y` against `gain * constellation`.
///
/// Exact inverse of [`gray_modulate`] at zero noise; ties at a decision
/// boundary resolve toward the higher level (so BPSK at y = 0 decides +1).
pub fn gray_demodulate(y: Complex64, modulation: Modulation, gain: f64) -> Result<Vec<Bit>> {
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(Error::InvalidInput(format!("demodulation gain must be positive, got {gain}")));
    }
    let levels = modulation.levels_per_dim();
    let scale = modulation.dim_scale();
    let m_d = modulation.bits_per_dim();
    let mut bits = Vec::with_capacity(modulation.bits_per_symbol() as usize);
    let i_idx = pam_nearest(y.re / gain, levels, scale);
    word_to_bits(gray_code(i_idx), m_d, &mut bits);
    if modulation.dims() == 2 {
        let q_idx = pam_nearest(y.im / gain, levels, scale);
        word_to_bits(gray_code(q_idx), m_d, &mut bits);
    }
    Ok(bits)
}

/// Exact Gray-coded BER of one constellation on AWGN at the given Eb/N0.
///
/// Evaluated by enumerating the per-dimension PAM decision cells, so every
/// Q-term (nearest neighbor and beyond) is accounted for. For BPSK and
/// 4-QAM this reduces to Q(sqrt(2 Eb/N0)) exactly.
pub fn analytic_ber(modulation: Modulation, ebn0_linear: f64) -> Result<f64> {
    if ebn0_linear < 0.0 || !ebn0_linear.is_finite() {
        return Err(Error::InvalidInput(format!(
            "Eb/N0 must be finite and >= 0, got {ebn0_linear}"
        )));
    }
    let m_total = modulation.bits_per_symbol() as f64;
    let levels = modulation.levels_per_dim();
    let m_d = modulation.bits_per_dim();
    let scale = modulation.dim_scale();

    if ebn0_linear == 0.0 {
        // Infinite noise: decisions collapse to the outermost levels.
        let lo = gray_code(0);
        let hi = gray_code(levels - 1);
        let mut total = 0.0;
        for i in 0..levels {
            let g = gray_code(i);
            total += 0.5 * ((g ^ lo).count_ones() + (g ^ hi).count_ones()) as f64;
        }
        return Ok(total / (levels as f64 * m_d as f64));
    }

    // Unit symbol energy: N0 = Eb/ebn0 = 1/(bits * ebn0).
    let n0 = 1.0 / (m_total * ebn0_linear);
    let sigma = (n0 / 2.0).sqrt();

    let mut total = 0.0;
    for sent in 0..levels {
        let l_sent = pam_level(sent, levels, scale);
        let g_sent = gray_code(sent);
        for decided in 0..levels {
            let below = if decided == 0 {
                1.0
            } else {
                let boundary = (2.0 * decided as f64 - 1.0 - (levels - 1) as f64) * scale;
                q_function((boundary - l_sent) / sigma)
            };
            let above = if decided == levels - 1 {
                0.0
            } else {
                let boundary = (2.0 * decided as f64 + 1.0 - (levels - 1) as f64) * scale;
                q_function((boundary - l_sent) / sigma)
            };
            let p_cell = below - above;
            total += p_cell * (g_sent ^ gray_code(decided)).count_ones() as f64;
        }
    }
    Ok(total / (levels as f64 * m_d as f64))
}

/// Water-filling result: per-sub-channel powers in Watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub p: Vec<f64>,
}

impl PowerAllocation {
    /// Diagonal entries sqrt(p_i) of the power-allocation matrix.
    pub fn sigma(&self) -> Vec<f64> {
        self.p.iter().map(|x| x.sqrt()).collect()
    }
}

/// Water-filling over parallel sub-channels with gains-squared `lambda_sq`.
///
/// Solves p_i = max(0, mu - N0/lambda_sq_i) with the water level mu chosen
/// so that sum(p) = P, by closing the active set exactly.
pub fn waterfill(lambda_sq: &[f64], n0: f64, p_total: f64) -> Result<PowerAllocation> {
    if !(n0 > 0.0) || !n0.is_finite() {
        return Err(Error::InvalidInput(format!("noise power must be positive, got {n0}")));
    }
    if !(p_total > 0.0) || !p_total.is_finite() {
        return Err(Error::InvalidInput(format!("total power must be positive, got {p_total}")));
    }
    for &l in lambda_sq {
        if l < 0.0 || !l.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sub-channel gains must be finite and >= 0, got {l}"
            )));
        }
    }

    // Floors N0/lambda^2, usable sub-channels sorted strongest first.
    let mut order: Vec<usize> = (0..lambda_sq.len()).filter(|&i| lambda_sq[i] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::NoFeasibleAllocation);
    }
    order.sort_by(|&a, &b| {
        (n0 / lambda_sq[a]).partial_cmp(&(n0 / lambda_sq[b])).expect("floors are finite")
    });

    let floors: Vec<f64> = order.iter().map(|&i| n0 / lambda_sq[i]).collect();
    let mut p = vec![0.0; lambda_sq.len()];
    for active in (1..=floors.len()).rev() {
        let mu = (p_total + floors[..active].iter().sum::<f64>()) / active as f64;
        if mu > floors[active - 1] {
            for k in 0..active {
                p[order[k]] = mu - floors[k];
            }
            return Ok(PowerAllocation { p });
        }
    }
    unreachable!("the single strongest sub-channel always admits a positive level");
}

/// Bits-per-sub-channel load of one transmission frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BitAllocation {
    /// Bits per sub-channel, each from {0, 1, 2, 4, 6}.
    pub bits: Vec<u32>,
    /// Fraction of the total power given to each sub-channel; sums to 1.
    pub power_fraction: Vec<f64>,
}

impl BitAllocation {
    pub fn total_bits(&self) -> u32 {
        self.bits.iter().sum()
    }

    fn modulations(&self) -> Vec<Option<Modulation>> {
        self.bits
            .iter()
            .map(|&b| if b == 0 { None } else { Some(Modulation::from_bits(b).expect("validated")) })
            .collect()
    }
}

const BIT_CHOICES: [u32; 5] = [0, 1, 2, 4, 6];
const SUPPORTED_LOADS: [u32; 4] = [1, 2, 4, 6];
// Power split search step: 1% of the budget.
const POWER_GRID_STEPS: u32 = 100;

/// Predicted bit-error count per frame for one split and power fractions.
fn predicted_errors(bits: &[u32], powers: &[f64], lambda: &[f64], n0: f64) -> Result<f64> {
    let mut total = 0.0;
    for ((&b, &p), &l) in bits.iter().zip(powers).zip(lambda) {
        if b == 0 {
            continue;
        }
        let modulation = Modulation::from_bits(b)?;
        let ebn0 = l * l * p / (n0 * b as f64);
        total += b as f64 * analytic_ber(modulation, ebn0)?;
    }
    Ok(total)
}

/// Choose the bit split and power fractions minimizing predicted BER.
///
/// All splits of `n_s` bits over the sub-channels (sizes from {0,1,2,4,6})
/// are enumerated; for each, the power fraction to sub-channel 1 is grid
/// searched at 1% resolution. Ties prefer loading the stronger sub-channel,
/// which is first (lambda is sorted non-increasing).
pub fn best_allocation(lambda: &[f64], n0: f64, n_s: u32, p_total: f64) -> Result<BitAllocation> {
    if lambda.len() != 2 {
        return Err(Error::InvalidInput("bit loading is implemented for 2 sub-channels".into()));
    }
    if !SUPPORTED_LOADS.contains(&n_s) {
        return Err(Error::InfeasibleBitLoad { requested: n_s, subchannels: lambda.len() });
    }

    let mut splits: Vec<[u32; 2]> = Vec::new();
    for &b0 in &BIT_CHOICES {
        for &b1 in &BIT_CHOICES {
            if b0 + b1 == n_s {
                splits.push([b0, b1]);
            }
        }
    }
    // Iterate with more bits on the stronger sub-channel first so that ties
    // resolve deterministically in its favor.
    splits.sort_by(|a, b| b[0].cmp(&a[0]));

    let mut best: Option<(f64, BitAllocation)> = None;
    for split in &splits {
        for step in 0..=POWER_GRID_STEPS {
            let f = step as f64 / POWER_GRID_STEPS as f64;
            let fractions = [f, 1.0 - f];
            let powers = [f * p_total, (1.0 - f) * p_total];
            let errors = predicted_errors(split, &powers, lambda, n0)?;
            if best.as_ref().map_or(true, |(e, _)| errors < *e) {
                best = Some((
                    errors,
                    BitAllocation { bits: split.to_vec(), power_fraction: fractions.to_vec() },
                ));
            }
        }
    }
    Ok(best.expect("at least one split exists for every supported load").1)
}

/// Bit- and frame-error counts from simulating one allocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimCounts {
    pub frames: u64,
    pub bit_errors: u64,
    pub frame_errors: u64,
}

/// Simulate `n_frames` transmissions of `alloc` through the channel.
///
/// Transmit chain: x = V diag(sqrt(p)) s, receive chain: U^H y followed by
/// per-sub-channel minimum-distance detection with gain lambda_i sqrt(p_i).
pub fn simulate_allocation(
    ch: &ChannelRealization,
    alloc: &BitAllocation,
    p_total: f64,
    n_frames: u64,
    rng: &mut Rng64,
) -> Result<SimCounts> {
    let modulations = alloc.modulations();
    let powers: Vec<f64> = alloc.power_fraction.iter().map(|f| f * p_total).collect();
    let gains: Vec<f64> =
        ch.svd.lambda.iter().zip(&powers).map(|(l, p)| l * p.sqrt()).collect();
    let uh = ch.svd.u.hermitian();
    let n_s = alloc.total_bits() as usize;

    let mut counts = SimCounts::default();
    let mut payload: Vec<Bit> = Vec::with_capacity(n_s);
    for _ in 0..n_frames {
        payload.clear();
        for _ in 0..n_s {
            payload.push(if rng.gen::<bool>() { 1 } else { -1 });
        }

        // Map payload bits onto the loaded sub-channels in order.
        let mut offset = 0usize;
        let mut symbols = vec![Complex64::new(0.0, 0.0); alloc.bits.len()];
        for (i, modulation) in modulations.iter().enumerate() {
            if let Some(m) = modulation {
                let nb = m.bits_per_symbol() as usize;
                let s = gray_modulate(&payload[offset..offset + nb], *m)?;
                symbols[i] = s * powers[i].sqrt();
                offset += nb;
            }
        }

        let x = ch.svd.v.mul_vec(&symbols)?;
        let y = apply_channel(&ch.h, &x, ch.n0, rng)?;
        let observed = uh.mul_vec(&y)?;

        let mut frame_bit_errors = 0u64;
        let mut offset = 0usize;
        for (i, modulation) in modulations.iter().enumerate() {
            if let Some(m) = modulation {
                let nb = m.bits_per_symbol() as usize;
                let decided = gray_demodulate(observed[i], *m, gains[i])?;
                for (tx, rx) in payload[offset..offset + nb].iter().zip(&decided) {
                    if tx != rx {
                        frame_bit_errors += 1;
                    }
                }
                offset += nb;
            }
        }
        counts.frames += 1;
        counts.bit_errors += frame_bit_errors;
        if frame_bit_errors > 0 {
            counts.frame_errors += 1;
        }
    }
    Ok(counts)
}

/// Pick the best bit allocation for the channel and measure its BER.
pub fn allocate_and_simulate(
    ch: &ChannelRealization,
    n_s: u32,
    p_total: f64,
    rng: &mut Rng64,
    n_frames: u64,
) -> Result<(BitAllocation, f64)> {
    if n_frames == 0 {
        return Err(Error::InvalidInput("frame count must be >= 1".into()));
    }
    let alloc = best_allocation(&ch.svd.lambda, ch.n0, n_s, p_total)?;
    let counts = simulate_allocation(ch, &alloc, p_total, n_frames, rng)?;
    let ber = counts.bit_errors as f64 / (counts.frames as f64 * n_s as f64);
    Ok((alloc, ber))
}

use rand::Rng;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{rng_from_seed, sample_channel};
    use crate::linalg::{svd, ComplexMatrix};
    use approx::assert_abs_diff_eq;

    /// Bisection on the water level; independent of the active-set solver.
    fn waterfill_bisection(lambda_sq: &[f64], n0: f64, p_total: f64) -> Vec<f64> {
        let floors: Vec<f64> =
            lambda_sq.iter().map(|&l| if l > 0.0 { n0 / l } else { f64::INFINITY }).collect();
        let spill = |mu: f64| -> f64 {
            floors.iter().map(|&f| (mu - f).max(0.0)).sum::<f64>()
        };
        let mut lo = floors.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = lo + p_total;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spill(mid) < p_total {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = 0.5 * (lo + hi);
        floors.iter().map(|&f| (mu - f).max(0.0)).collect()
    }

    /// Q(x) by Simpson quadrature of the normal density, independent of erfc.
    fn q_by_quadrature(x: f64) -> f64 {
        let upper = x + 20.0;
        let n = 20_000;
        let h = (upper - x) / n as f64;
        let phi = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = phi(x) + phi(upper);
        for k in 1..n {
            let t = x + k as f64 * h;
            acc += phi(t) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn gray_code_round_trips() {
        for n in 0..64 {
            assert_eq!(gray_decode(gray_code(n)), n);
        }
    }

    #[test]
    fn gray_code_adjacency() {
        for n in 0..63u32 {
            assert_eq!((gray_code(n) ^ gray_code(n + 1)).count_ones(), 1);
        }
    }

    #[test]
    fn bpsk_maps_sign() {
        assert_eq!(gray_modulate(&[1], Modulation::Bpsk).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(gray_modulate(&[-1], Modulation::Bpsk).unwrap(), Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn qam4_points_and_energy() {
        let inv_sqrt2 = 0.5f64.sqrt();
        let mut seen = Vec::new();
        for b0 in [-1i8, 1] {
            for b1 in [-1i8, 1] {
                let s = gray_modulate(&[b0, b1], Modulation::Qam4).unwrap();
                assert_abs_diff_eq!(s.re.abs(), inv_sqrt2, epsilon = 1e-15);
                assert_abs_diff_eq!(s.im.abs(), inv_sqrt2, epsilon = 1e-15);
                seen.push(s);
            }
        }
        let energy: f64 = seen.iter().map(|s| s.norm_sqr()).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(energy, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constellations_have_unit_average_energy() {
        for m in [Modulation::Bpsk, Modulation::Qam4, Modulation::Qam16, Modulation::Qam64] {
            let nb = m.bits_per_symbol();
            let count = 1u32 << nb;
            let mut energy = 0.0;
            for pattern in 0..count {
                let bits: Vec<Bit> =
                    (0..nb).rev().map(|k| if (pattern >> k) & 1 == 1 { 1 } else { -1 }).collect();
                energy += gray_modulate(&bits, m).unwrap().norm_sqr();
            }
            assert_abs_diff_eq!(energy / count as f64, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_noise_round_trip_every_pattern() {
        for m in [Modulation::Bpsk, Modulation::Qam4, Modulation::Qam16, Modulation::Qam64] {
            let nb = m.bits_per_symbol();
            for pattern in 0..(1u32 << nb) {
                let bits: Vec<Bit> =
                    (0..nb).rev().map(|k| if (pattern >> k) & 1 == 1 { 1 } else { -1 }).collect();
                let s = gray_modulate(&bits, m).unwrap();
                let decided = gray_demodulate(s * 3.5, m, 3.5).unwrap();
                assert_eq!(bits, decided, "{m:?} pattern {pattern:b}");
            }
        }
    }

    #[test]
    fn bpsk_tie_breaks_positive() {
        let bits = gray_demodulate(Complex64::new(0.0, 0.0), Modulation::Bpsk, 1.0).unwrap();
        assert_eq!(bits, vec![1]);
    }

    #[test]
    fn wrong_bit_count_rejected() {
        assert!(gray_modulate(&[1, 1], Modulation::Bpsk).is_err());
        assert!(gray_modulate(&[1], Modulation::Qam16).is_err());
    }

    #[test]
    fn ber_decreases_with_gain() {
        let mut rng = rng_from_seed(17);
        let mut previous = f64::INFINITY;
        for gain in [0.5, 1.0, 2.0, 4.0] {
            let mut errors = 0u64;
            let n = 20_000;
            for _ in 0..n {
                let bits = [if rng.gen::<bool>() { 1i8 } else { -1 }; 1];
                let s = gray_modulate(&bits, Modulation::Bpsk).unwrap();
                let noise = Complex64::new(
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.5,
                    0.0,
                );
                let decided =
                    gray_demodulate(s * gain + noise, Modulation::Bpsk, gain).unwrap();
                if decided[0] != bits[0] {
                    errors += 1;
                }
            }
            let ber = errors as f64 / n as f64;
            assert!(ber < previous, "BER should fall as gain rises");
            previous = ber;
        }
    }

    #[test]
    fn analytic_bpsk_matches_q_function() {
        let ber = analytic_ber(Modulation::Bpsk, 10.0).unwrap();
        let expected = q_by_quadrature(20f64.sqrt());
        assert_abs_diff_eq!(ber, expected, epsilon = 1e-9);
        // The commonly quoted value.
        assert_abs_diff_eq!(ber, 3.87e-6, epsilon = 0.02e-6);
    }

    #[test]
    fn analytic_ber_at_zero_ebn0() {
        for m in [Modulation::Bpsk, Modulation::Qam4, Modulation::Qam16, Modulation::Qam64] {
            let ber = analytic_ber(m, 0.0).unwrap();
            assert!(ber <= 0.5, "{m:?} gave {ber}");
        }
        assert_abs_diff_eq!(analytic_ber(Modulation::Bpsk, 0.0).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn qam4_equals_bpsk() {
        for ebn0 in [0.0, 0.5, 1.0, 4.0, 10.0] {
            let a = analytic_ber(Modulation::Bpsk, ebn0).unwrap();
            let b = analytic_ber(Modulation::Qam4, ebn0).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn analytic_matches_monte_carlo() {
        // 5-point grid, 3 Monte Carlo standard deviations.
        let mut rng = rng_from_seed(23);
        for m in [Modulation::Bpsk, Modulation::Qam16] {
            for ebn0_db in [0.0, 2.0, 4.0, 6.0, 8.0] {
                let ebn0 = 10f64.powf(ebn0_db / 10.0);
                let expected = analytic_ber(m, ebn0).unwrap();
                let nb = m.bits_per_symbol();
                let n0 = 1.0 / (nb as f64 * ebn0);
                let sigma = (n0 / 2.0).sqrt();
                let frames = 40_000u64;
                let mut errors = 0u64;
                for _ in 0..frames {
                    let bits: Vec<Bit> =
                        (0..nb).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
                    let s = gray_modulate(&bits, m).unwrap();
                    let noise = Complex64::new(
                        rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma,
                        rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma,
                    );
                    let decided = gray_demodulate(s + noise, m, 1.0).unwrap();
                    errors +=
                        bits.iter().zip(&decided).filter(|(a, b)| a != b).count() as u64;
                }
                let total_bits = (frames * nb as u64) as f64;
                let measured = errors as f64 / total_bits;
                let sd = (expected * (1.0 - expected) / total_bits).sqrt();
                assert!(
                    (measured - expected).abs() <= 3.0 * sd.max(1e-12),
                    "{m:?} at {ebn0_db} dB: measured {measured}, expected {expected}"
                );
            }
        }
    }

    #[test]
    fn waterfill_symmetric_channels_split_evenly() {
        let alloc = waterfill(&[1.0, 1.0], 1.0, 20.0).unwrap();
        assert_abs_diff_eq!(alloc.p[0], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(alloc.p[1], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn waterfill_two_active_kkt() {
        let alloc = waterfill(&[4.0, 1.0], 1.0, 2.0).unwrap();
        assert_abs_diff_eq!(alloc.p[0], 1.375, epsilon = 1e-12);
        assert_abs_diff_eq!(alloc.p[1], 0.625, epsilon = 1e-12);
    }

    #[test]
    fn waterfill_shuts_off_weak_channel() {
        let alloc = waterfill(&[4.0, 0.01], 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(alloc.p[0], 1.0, epsilon = 1e-12);
        assert_eq!(alloc.p[1], 0.0);
    }

    #[test]
    fn waterfill_matches_bisection_oracle() {
        let mut rng = rng_from_seed(31);
        for _ in 0..500 {
            let lambda_sq = [rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 4.0];
            let n0 = 0.01 + rng.gen::<f64>() * 2.0;
            let p_total = 0.1 + rng.gen::<f64>() * 30.0;
            let exact = waterfill(&lambda_sq, n0, p_total).unwrap();
            let oracle = waterfill_bisection(&lambda_sq, n0, p_total);
            for (a, b) in exact.p.iter().zip(&oracle) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
            assert_abs_diff_eq!(exact.p.iter().sum::<f64>(), p_total, epsilon = 1e-9);
            // Complementary slackness: active channels share the water level.
            let mu = exact
                .p
                .iter()
                .zip(&lambda_sq)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, l)| p + n0 / l)
                .collect::<Vec<_>>();
            for pair in mu.windows(2) {
                assert_abs_diff_eq!(pair[0], pair[1], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn waterfill_rejects_dead_channel() {
        assert!(matches!(waterfill(&[0.0, 0.0], 1.0, 1.0), Err(Error::NoFeasibleAllocation)));
    }

    #[test]
    fn single_bit_goes_to_stronger_subchannel() {
        let alloc = best_allocation(&[2.0, 0.5], 0.5, 1, 20.0).unwrap();
        assert_eq!(alloc.bits, vec![1, 0]);
        assert_abs_diff_eq!(alloc.power_fraction[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn skewed_channel_prefers_loading_strong_subchannel() {
        // lambda1 >> lambda2: predicted BER of (2,0) beats (1,1).
        let lambda = [3.0, 0.05];
        let n0 = 0.25;
        let alloc = best_allocation(&lambda, n0, 2, 20.0).unwrap();
        assert_eq!(alloc.bits, vec![2, 0]);

        // Monte Carlo confirmation that (2,0) with all power indeed beats (1,1).
        let h = ComplexMatrix::new(
            2,
            2,
            vec![
                Complex64::new(3.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.05, 0.0),
            ],
        )
        .unwrap();
        let ch = ChannelRealization { svd: svd(&h).unwrap(), h, n0 };
        let strong = BitAllocation { bits: vec![2, 0], power_fraction: vec![1.0, 0.0] };
        let split = BitAllocation { bits: vec![1, 1], power_fraction: vec![0.5, 0.5] };
        let mut rng = rng_from_seed(41);
        let a = simulate_allocation(&ch, &strong, 20.0, 40_000, &mut rng).unwrap();
        let b = simulate_allocation(&ch, &split, 20.0, 40_000, &mut rng).unwrap();
        assert!(a.bit_errors < b.bit_errors, "strong {a:?} split {b:?}");
    }

    #[test]
    fn noiseless_transmission_is_error_free() {
        let mut rng = rng_from_seed(43);
        let ch = sample_channel(&mut rng).with_noise(1e-12);
        let mut sim_rng = rng_from_seed(44);
        let (_, ber) = allocate_and_simulate(&ch, 4, 20.0, &mut sim_rng, 2_000).unwrap();
        assert_eq!(ber, 0.0);
    }

    #[test]
    fn average_power_respects_budget() {
        // E|x|^2 = sum of loaded sub-channel powers <= P.
        let mut rng = rng_from_seed(47);
        let ch = sample_channel(&mut rng).with_noise(0.5);
        let alloc = best_allocation(&ch.svd.lambda, ch.n0, 4, 20.0).unwrap();
        let loaded_power: f64 = alloc
            .bits
            .iter()
            .zip(&alloc.power_fraction)
            .filter(|(b, _)| **b > 0)
            .map(|(_, f)| f * 20.0)
            .sum();
        assert!(loaded_power <= 20.0 + 1e-9);
        assert_abs_diff_eq!(alloc.power_fraction.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_unsupported_load() {
        let mut rng = rng_from_seed(53);
        let ch = sample_channel(&mut rng).with_noise(1.0);
        assert!(matches!(
            allocate_and_simulate(&ch, 3, 20.0, &mut rng_from_seed(1), 10),
            Err(Error::InfeasibleBitLoad { .. })
        ));
    }
}
