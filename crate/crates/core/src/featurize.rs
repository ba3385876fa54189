//! Feature encoding: 13-value microarchitecture-independent vectors,
//! z-score normalization, target transforms, and centered sliding windows.

use crate::trace::InstructionRecord;
use thiserror::Error;

pub const FEATURE_DIM: usize = 13;
pub const TARGET_CLIP: u32 = 1000;
pub const DEFAULT_TAU: u32 = 10;
pub const DEFAULT_WINDOW_N: usize = 576;
pub const DEFAULT_WINDOW_R: usize = 192;

/// Minimum per-feature standard deviation; constant columns normalize to 0.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FeaturizeError {
    #[error("empty input")]
    EmptyInput,
    #[error("record {0} carries no ground truth")]
    MissingLabel(usize),
    #[error("trace of {len} records is shorter than window length {n}")]
    TraceTooShort { len: usize, n: usize },
    #[error("invalid window geometry: R={r} must be <= N={n}, stride >= 1")]
    BadGeometry { n: usize, r: usize },
}

/// One instruction as 13 reals, in fixed order: pc_hi, pc_mid, pc_lo,
/// mem_hi, mem_mid, mem_lo, opclass, dst_class, dst_index, src1_class,
/// src1_index, src2_class, src2_index. All magnitudes stay below 2^23, so
/// every component is exactly representable as a 32-bit float.
pub type FeatureVector13 = [f64; FEATURE_DIM];

/// Splits a 64-bit address into (upper 22 bits, middle 22 bits, lower 20
/// bits): hi = floor(a / 2^42), mid = floor((a mod 2^42) / 2^20),
/// lo = a mod 2^20.
pub fn addr_split(a: u64) -> (u64, u64, u64) {
    (a >> 42, (a >> 20) & ((1 << 22) - 1), a & ((1 << 20) - 1))
}

/// Encodes one record into its 13-value feature vector. The memory address
/// splits to zeros when the record has no memory operand.
pub fn encode_record(r: &InstructionRecord) -> FeatureVector13 {
    let (pc_hi, pc_mid, pc_lo) = addr_split(r.pc);
    let (m_hi, m_mid, m_lo) = if r.has_mem() { addr_split(r.mem_addr) } else { (0, 0, 0) };
    [
        pc_hi as f64,
        pc_mid as f64,
        pc_lo as f64,
        m_hi as f64,
        m_mid as f64,
        m_lo as f64,
        r.opclass as f64,
        r.dst.reg_class as f64,
        r.dst.reg_index as f64,
        r.src1.reg_class as f64,
        r.src1.reg_index as f64,
        r.src2.reg_class as f64,
        r.src2.reg_index as f64,
    ]
}

/// Per-feature mean and standard deviation, fit on the training split and
/// stored with the checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
}

/// Fits z-score statistics. Standard deviation is the population form,
/// floored at [`STD_FLOOR`].
pub fn fit_norm(train_features: &[FeatureVector13]) -> Result<NormStats, FeaturizeError> {
    if train_features.is_empty() {
        return Err(FeaturizeError::EmptyInput);
    }
    let n = train_features.len() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    for v in train_features {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; FEATURE_DIM];
    for v in train_features {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            let d = x - m;
            *s += d * d;
        }
    }
    let mut std = [0.0; FEATURE_DIM];
    for (s, v) in std.iter_mut().zip(&var) {
        *s = (v / n).sqrt().max(STD_FLOOR);
    }
    Ok(NormStats { mean, std })
}

pub fn apply_norm(stats: &NormStats, v: &FeatureVector13) -> FeatureVector13 {
    let mut out = [0.0; FEATURE_DIM];
    for i in 0..FEATURE_DIM {
        out[i] = (v[i] - stats.mean[i]) / stats.std[i];
    }
    out
}

/// Log-compresses a latency: z = log(1 + min(y, 1000)); the regime label is
/// 1 iff y > tau (strict).
pub fn transform_target(y: u32, tau: u32) -> (f64, u8) {
    let clipped = y.min(TARGET_CLIP);
    let z = (1.0 + clipped as f64).ln();
    (z, u8::from(y > tau))
}

/// Inverse of the log transform: round(exp(z) - 1) clamped to [0, 1000].
pub fn invert_target(z: f64) -> u32 {
    let y = (z.exp() - 1.0).round();
    if y <= 0.0 {
        0
    } else if y >= TARGET_CLIP as f64 {
        TARGET_CLIP
    } else {
        y as u32
    }
}

/// An N-length feature sequence with a centered R-length target segment.
/// The target occupies window positions `left_context .. left_context + r`.
#[derive(Debug, Clone)]
pub struct FeatureWindow {
    /// N raw (unnormalized) feature vectors.
    pub features: Vec<FeatureVector13>,
    /// Log-transformed clipped latencies for the R target positions.
    pub targets_z: Vec<f64>,
    /// Regime labels for the R target positions.
    pub targets_c: Vec<u8>,
    /// Clipped integer latencies for the R target positions.
    pub raw_y: Vec<u32>,
    /// Left context length s = floor((N - R) / 2).
    pub left_context: usize,
    /// Index of the window's first record in the source trace.
    pub trace_offset: usize,
}

impl FeatureWindow {
    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn r(&self) -> usize {
        self.raw_y.len()
    }

    /// Trace index of the first target-segment instruction.
    pub fn target_offset(&self) -> usize {
        self.trace_offset + self.left_context
    }
}

/// Builds sliding windows starting at offsets 0, stride, 2*stride, ... over a
/// labeled trace. With stride = R the target segments tile the covered region
/// without gap or overlap.
pub fn build_windows(
    records: &[InstructionRecord],
    n: usize,
    r: usize,
    stride: usize,
    tau: u32,
) -> Result<Vec<FeatureWindow>, FeaturizeError> {
    if r > n || r == 0 || stride == 0 {
        return Err(FeaturizeError::BadGeometry { n, r });
    }
    if records.len() < n {
        return Err(FeaturizeError::TraceTooShort { len: records.len(), n });
    }
    let s = (n - r) / 2;
    let mut windows = Vec::new();
    let mut offset = 0;
    while offset + n <= records.len() {
        let slice = &records[offset..offset + n];
        let features: Vec<FeatureVector13> = slice.iter().map(encode_record).collect();
        let mut targets_z = Vec::with_capacity(r);
        let mut targets_c = Vec::with_capacity(r);
        let mut raw_y = Vec::with_capacity(r);
        for (k, rec) in slice[s..s + r].iter().enumerate() {
            let y = rec
                .gt_cycles
                .ok_or(FeaturizeError::MissingLabel(offset + s + k))?;
            let (z, c) = transform_target(y, tau);
            targets_z.push(z);
            targets_c.push(c);
            raw_y.push(y.min(TARGET_CLIP));
        }
        windows.push(FeatureWindow {
            features,
            targets_z,
            targets_c,
            raw_y,
            left_context: s,
            trace_offset: offset,
        });
        offset += stride;
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{OpClass, RegRef, FLAG_HAS_MEM, FLAG_IS_LOAD};

    #[test]
    fn addr_split_examples() {
        assert_eq!(addr_split(0), (0, 0, 0));
        assert_eq!(addr_split(1 << 42), (1, 0, 0));
        assert_eq!(addr_split((5 << 42) + (7 << 20) + 9), (5, 7, 9));
    }

    #[test]
    fn addr_split_reconstructs() {
        let mut x = 0x0123_4567_89ab_cdefu64;
        for _ in 0..1000 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let (hi, mid, lo) = addr_split(x);
            assert_eq!((hi << 42) + (mid << 20) + lo, x);
            assert!(hi < 1 << 22 && mid < 1 << 22 && lo < 1 << 20);
        }
    }

    #[test]
    fn encode_zero_record_keeps_unused_codes() {
        let r = InstructionRecord {
            pc: 0,
            mem_addr: 0,
            opclass: OpClass::IntAlu as u16,
            dst: RegRef::NONE,
            src1: RegRef::NONE,
            src2: RegRef::NONE,
            flags: 0,
            gt_cycles: None,
        };
        let v = encode_record(&r);
        assert_eq!(&v[0..7], &[0.0; 7]);
        assert_eq!(&v[7..], &[255.0, 255.0, 255.0, 255.0, 255.0, 255.0]);
    }

    #[test]
    fn encoded_magnitudes_fit_in_f32_mantissa() {
        let r = InstructionRecord {
            pc: u64::MAX,
            mem_addr: u64::MAX,
            opclass: 15,
            dst: RegRef::int(255),
            src1: RegRef::NONE,
            src2: RegRef::NONE,
            flags: FLAG_HAS_MEM | FLAG_IS_LOAD,
            gt_cycles: None,
        };
        for x in encode_record(&r) {
            assert!(x < (1u64 << 23) as f64);
            assert_eq!(x as f32 as f64, x); // exactly representable
        }
    }

    #[test]
    fn norm_stats_basics() {
        let mut a = [0.0; 13];
        let mut b = [0.0; 13];
        a[0] = 0.0;
        b[0] = 2.0;
        let stats = fit_norm(&[a, b]).unwrap();
        let na = apply_norm(&stats, &a);
        let nb = apply_norm(&stats, &b);
        assert!((na[0] + 1.0).abs() < 1e-12);
        assert!((nb[0] - 1.0).abs() < 1e-12);
        // Constant columns floor to STD_FLOOR and normalize to 0.
        assert_eq!(stats.std[1], STD_FLOOR);
        assert_eq!(na[1], 0.0);
        assert!(fit_norm(&[]).is_err());
    }

    #[test]
    fn post_normalization_mean_is_zero() {
        let feats: Vec<FeatureVector13> = (0..500)
            .map(|i| {
                let mut v = [0.0; 13];
                for (j, x) in v.iter_mut().enumerate() {
                    *x = ((i * 31 + j * 7) % 97) as f64;
                }
                v
            })
            .collect();
        let stats = fit_norm(&feats).unwrap();
        let mut mean = [0.0f64; 13];
        for f in &feats {
            let nf = apply_norm(&stats, f);
            for (m, x) in mean.iter_mut().zip(&nf) {
                *m += x;
            }
        }
        for m in &mean {
            assert!((m / feats.len() as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn target_transform_examples() {
        assert_eq!(transform_target(0, 10), (0.0, 0));
        let (z, c) = transform_target(5000, 10);
        assert!((z - 1001f64.ln()).abs() < 1e-12);
        assert_eq!(c, 1);
        assert_eq!(transform_target(10, 10).1, 0);
        assert_eq!(transform_target(11, 10).1, 1);
    }

    #[test]
    fn invert_target_is_exact_inverse_on_0_to_1000() {
        assert_eq!(invert_target(0.0), 0);
        assert_eq!(invert_target(1001f64.ln()), 1000);
        for y in 0..=1000u32 {
            let (z, _) = transform_target(y, 10);
            assert_eq!(invert_target(z), y);
        }
    }

    fn labeled_records(n: usize) -> Vec<InstructionRecord> {
        (0..n)
            .map(|i| InstructionRecord {
                pc: i as u64 * 4,
                mem_addr: 0,
                opclass: OpClass::IntAlu as u16,
                dst: RegRef::int(1),
                src1: RegRef::int(2),
                src2: RegRef::NONE,
                flags: 0,
                gt_cycles: Some((i % 7) as u32),
            })
            .collect()
    }

    #[test]
    fn window_geometry() {
        let recs = labeled_records(10);
        let ws = build_windows(&recs, 10, 4, 1, 10).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].left_context, 3);
        // Window over records 0..10 targets records 3..7 (positions s+1..s+R,
        // 1-based).
        assert_eq!(ws[0].target_offset(), 3);
        assert_eq!(ws[0].raw_y, vec![3, 4, 5, 6]);

        let ws = build_windows(&recs, 4, 4, 4, 10).unwrap();
        assert_eq!(ws[0].left_context, 0); // N = R: no context

        let recs = labeled_records(1000);
        let ws = build_windows(&recs, 600, 200, 200, 10).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[0].target_offset(), 200);
        assert_eq!(ws[2].target_offset() + 200, 800);
    }

    #[test]
    fn stride_r_tiles_without_gap_or_overlap() {
        let recs = labeled_records(1000);
        let (n, r) = (60, 20);
        let ws = build_windows(&recs, n, r, r, 10).unwrap();
        let mut covered = vec![0u32; 1000];
        for w in &ws {
            for k in 0..r {
                covered[w.target_offset() + k] += 1;
            }
        }
        let s = (n - r) / 2;
        let last_target_end = ws.last().unwrap().target_offset() + r;
        for (i, &c) in covered.iter().enumerate() {
            if i >= s && i < last_target_end {
                assert_eq!(c, 1, "record {i} covered {c} times");
            } else {
                assert_eq!(c, 0);
            }
        }
    }

    #[test]
    fn window_errors() {
        let recs = labeled_records(5);
        assert!(matches!(
            build_windows(&recs, 10, 4, 1, 10),
            Err(FeaturizeError::TraceTooShort { .. })
        ));
        assert!(matches!(
            build_windows(&recs, 4, 5, 1, 10),
            Err(FeaturizeError::BadGeometry { .. })
        ));
    }
}
