//! Instruction records, the binary trace format, epoch slicing, epoch
//! signatures, and ground-truth latency statistics.
//!
//! Trace layout (little-endian throughout):
//!
//! Header, 32 bytes: magic `NSTR`, version u16 (=1), flags u16 (bit0 =
//! labeled), record_count u64, epoch_len u32, 12 reserved zero bytes.
//!
//! Record, 32 bytes: pc u64, mem_addr u64, opclass u16, dst_class u8,
//! dst_index u8, src1_class u8, src1_index u8, src2_class u8, src2_index u8,
//! flags u8, 3 pad bytes (=0), gt_cycles u32. Unlabeled traces store
//! `0xFFFF_FFFF` in gt_cycles.

use sha2::{Digest, Sha256};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const TRACE_MAGIC: [u8; 4] = *b"NSTR";
pub const TRACE_VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 32;
pub const RECORD_BYTES: usize = 32;
pub const DEFAULT_EPOCH_LEN: u32 = 100_000;

const GT_UNLABELED: u32 = u32::MAX;

pub const FLAG_HAS_MEM: u8 = 1 << 0;
pub const FLAG_IS_LOAD: u8 = 1 << 1;
pub const FLAG_IS_STORE: u8 = 1 << 2;
pub const FLAG_IS_BRANCH: u8 = 1 << 3;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic: expected \"NSTR\"")]
    BadMagic,
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated trace body: header promises {expected} records, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("invalid record at index {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("nonzero reserved bytes in header or record padding")]
    NonzeroPadding,
    #[error("labeled trace requested but record {0} carries no ground truth")]
    MissingLabel(usize),
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Register operand: a class code and an index within the class.
/// Class 255 with index 255 marks an unused operand slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegRef {
    pub reg_class: u8,
    pub reg_index: u8,
}

impl RegRef {
    pub const INT: u8 = 0;
    pub const FLOAT: u8 = 1;
    pub const VECTOR: u8 = 2;
    pub const MISC: u8 = 3;
    pub const UNUSED_CODE: u8 = 255;

    pub const NONE: RegRef = RegRef {
        reg_class: Self::UNUSED_CODE,
        reg_index: Self::UNUSED_CODE,
    };

    pub fn int(index: u8) -> Self {
        RegRef { reg_class: Self::INT, reg_index: index }
    }

    pub fn float(index: u8) -> Self {
        RegRef { reg_class: Self::FLOAT, reg_index: index }
    }

    pub fn is_unused(&self) -> bool {
        self.reg_class == Self::UNUSED_CODE
    }

    fn validate(&self) -> Result<(), String> {
        match self.reg_class {
            0..=3 => Ok(()),
            Self::UNUSED_CODE => {
                if self.reg_index == Self::UNUSED_CODE {
                    Ok(())
                } else {
                    Err(format!(
                        "unused-operand class must pair with index 255, got {}",
                        self.reg_index
                    ))
                }
            }
            c => Err(format!("reg_class {c} outside {{0,1,2,3,255}}")),
        }
    }
}

/// The fixed 16-entry operation-class vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum OpClass {
    IntAlu = 0,
    IntMul = 1,
    IntDiv = 2,
    FloatAdd = 3,
    FloatMul = 4,
    FloatDiv = 5,
    Load = 6,
    Store = 7,
    Branch = 8,
    Call = 9,
    Return = 10,
    Nop = 11,
    SimdAlu = 12,
    Fence = 13,
    CsrOp = 14,
    Other = 15,
}

pub const OPCLASS_COUNT: u16 = 16;

impl OpClass {
    pub fn from_code(code: u16) -> Option<OpClass> {
        use OpClass::*;
        Some(match code {
            0 => IntAlu,
            1 => IntMul,
            2 => IntDiv,
            3 => FloatAdd,
            4 => FloatMul,
            5 => FloatDiv,
            6 => Load,
            7 => Store,
            8 => Branch,
            9 => Call,
            10 => Return,
            11 => Nop,
            12 => SimdAlu,
            13 => Fence,
            14 => CsrOp,
            15 => Other,
            _ => return None,
        })
    }
}

/// One retired instruction: six microarchitecture-independent properties plus
/// an optional ground-truth retirement latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstructionRecord {
    pub pc: u64,
    pub mem_addr: u64,
    pub opclass: u16,
    pub dst: RegRef,
    pub src1: RegRef,
    pub src2: RegRef,
    pub flags: u8,
    pub gt_cycles: Option<u32>,
}

impl InstructionRecord {
    pub fn has_mem(&self) -> bool {
        self.flags & FLAG_HAS_MEM != 0
    }

    pub fn is_load(&self) -> bool {
        self.flags & FLAG_IS_LOAD != 0
    }

    pub fn is_store(&self) -> bool {
        self.flags & FLAG_IS_STORE != 0
    }

    pub fn is_branch(&self) -> bool {
        self.flags & FLAG_IS_BRANCH != 0
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.opclass >= OPCLASS_COUNT {
            return Err(format!("opclass {} out of vocabulary", self.opclass));
        }
        if !self.has_mem() && self.mem_addr != 0 {
            return Err("mem_addr must be 0 when has_mem is clear".into());
        }
        if self.is_load() && self.is_store() {
            return Err("is_load and is_store both set".into());
        }
        if (self.is_load() || self.is_store()) && !self.has_mem() {
            return Err("load/store without has_mem".into());
        }
        self.dst.validate().map_err(|e| format!("dst: {e}"))?;
        self.src1.validate().map_err(|e| format!("src1: {e}"))?;
        self.src2.validate().map_err(|e| format!("src2: {e}"))?;
        Ok(())
    }

    fn encode(&self, labeled: bool, buf: &mut [u8; RECORD_BYTES]) {
        buf[0..8].copy_from_slice(&self.pc.to_le_bytes());
        buf[8..16].copy_from_slice(&self.mem_addr.to_le_bytes());
        buf[16..18].copy_from_slice(&self.opclass.to_le_bytes());
        buf[18] = self.dst.reg_class;
        buf[19] = self.dst.reg_index;
        buf[20] = self.src1.reg_class;
        buf[21] = self.src1.reg_index;
        buf[22] = self.src2.reg_class;
        buf[23] = self.src2.reg_index;
        buf[24] = self.flags;
        buf[25..28].fill(0);
        let gt = if labeled {
            self.gt_cycles.unwrap_or(GT_UNLABELED)
        } else {
            GT_UNLABELED
        };
        buf[28..32].copy_from_slice(&gt.to_le_bytes());
    }

    fn decode(buf: &[u8; RECORD_BYTES], labeled: bool, index: usize) -> Result<Self, TraceError> {
        if buf[25..28] != [0, 0, 0] {
            return Err(TraceError::NonzeroPadding);
        }
        let gt_raw = u32::from_le_bytes(buf[28..32].try_into().unwrap());
        let gt_cycles = if labeled {
            if gt_raw == GT_UNLABELED {
                return Err(TraceError::MissingLabel(index));
            }
            Some(gt_raw)
        } else {
            None
        };
        let rec = InstructionRecord {
            pc: u64::from_le_bytes(buf[0..8].try_into().unwrap()),
            mem_addr: u64::from_le_bytes(buf[8..16].try_into().unwrap()),
            opclass: u16::from_le_bytes(buf[16..18].try_into().unwrap()),
            dst: RegRef { reg_class: buf[18], reg_index: buf[19] },
            src1: RegRef { reg_class: buf[20], reg_index: buf[21] },
            src2: RegRef { reg_class: buf[22], reg_index: buf[23] },
            flags: buf[24],
            gt_cycles,
        };
        rec.validate().map_err(|reason| TraceError::InvalidRecord { index, reason })?;
        Ok(rec)
    }
}

/// A contiguous, fixed-length slice of a trace.
#[derive(Debug, Clone, Copy)]
pub struct Epoch<'a> {
    pub records: &'a [InstructionRecord],
}

/// SHA-256 digest over an epoch's PC sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochSignature {
    pub digest: [u8; 32],
}

impl EpochSignature {
    pub fn to_hex(&self) -> String {
        self.digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Fractions of instructions per ground-truth cycle bin: integer bins 0..=10
/// plus one tail bin for latencies in (10, 1000] (values above 1000 clip into
/// the tail).
#[derive(Debug, Clone, PartialEq)]
pub struct GtHistogram {
    pub bins: [f64; 12],
}

impl GtHistogram {
    pub fn tail_fraction(&self) -> f64 {
        self.bins[11]
    }

    pub fn zero_fraction(&self) -> f64 {
        self.bins[0]
    }
}

/// Serializes `records` as a trace file. Returns the number of bytes written.
///
/// When `labeled` is false, ground-truth fields are written as the unlabeled
/// sentinel regardless of record contents.
pub fn write_trace<W: Write>(
    records: &[InstructionRecord],
    labeled: bool,
    epoch_len: u32,
    sink: &mut W,
) -> Result<u64, TraceError> {
    for (index, rec) in records.iter().enumerate() {
        rec.validate().map_err(|reason| TraceError::InvalidRecord { index, reason })?;
        if labeled && rec.gt_cycles.is_none() {
            return Err(TraceError::MissingLabel(index));
        }
    }
    let mut header = [0u8; HEADER_BYTES];
    header[0..4].copy_from_slice(&TRACE_MAGIC);
    header[4..6].copy_from_slice(&TRACE_VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&(labeled as u16).to_le_bytes());
    header[8..16].copy_from_slice(&(records.len() as u64).to_le_bytes());
    header[16..20].copy_from_slice(&epoch_len.to_le_bytes());
    sink.write_all(&header)?;

    let mut buf = [0u8; RECORD_BYTES];
    for rec in records {
        rec.encode(labeled, &mut buf);
        sink.write_all(&buf)?;
    }
    Ok((HEADER_BYTES + RECORD_BYTES * records.len()) as u64)
}

/// Reads a trace file. Returns the labeled flag, the header epoch length, and
/// the records. Exact inverse of [`write_trace`].
pub fn read_trace<R: Read>(
    source: &mut R,
) -> Result<(bool, u32, Vec<InstructionRecord>), TraceError> {
    let mut header = [0u8; HEADER_BYTES];
    source.read_exact(&mut header).map_err(|_| TraceError::BadMagic)?;
    if header[0..4] != TRACE_MAGIC {
        return Err(TraceError::BadMagic);
    }
    let version = u16::from_le_bytes(header[4..6].try_into().unwrap());
    if version != TRACE_VERSION {
        return Err(TraceError::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes(header[6..8].try_into().unwrap());
    let labeled = flags & 1 != 0;
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let epoch_len = u32::from_le_bytes(header[16..20].try_into().unwrap());
    if header[20..32].iter().any(|&b| b != 0) {
        return Err(TraceError::NonzeroPadding);
    }

    let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut buf = [0u8; RECORD_BYTES];
    for index in 0..count {
        source
            .read_exact(&mut buf)
            .map_err(|_| TraceError::Truncated { expected: count, found: index })?;
        records.push(InstructionRecord::decode(&buf, labeled, index as usize)?);
    }
    Ok((labeled, epoch_len, records))
}

/// Splits a trace into consecutive non-overlapping epochs of `epoch_len`
/// records; a trailing partial epoch is discarded.
pub fn epoch_slice(records: &[InstructionRecord], epoch_len: usize) -> Vec<Epoch<'_>> {
    assert!(epoch_len >= 1, "epoch_len must be >= 1");
    records
        .chunks_exact(epoch_len)
        .map(|records| Epoch { records })
        .collect()
}

/// SHA-256 over the concatenation of each record's pc as 8 little-endian
/// bytes, in trace order. Depends only on the PC sequence.
pub fn epoch_signature(epoch: Epoch<'_>) -> EpochSignature {
    let mut hasher = Sha256::new();
    for rec in epoch.records {
        hasher.update(rec.pc.to_le_bytes());
    }
    EpochSignature { digest: hasher.finalize().into() }
}

/// Ground-truth latency distribution over the 12 bins of [`GtHistogram`].
pub fn gt_histogram(records: &[InstructionRecord]) -> Result<GtHistogram, TraceError> {
    if records.is_empty() {
        return Err(TraceError::EmptyInput);
    }
    let mut counts = [0u64; 12];
    for (index, rec) in records.iter().enumerate() {
        let gt = rec.gt_cycles.ok_or(TraceError::MissingLabel(index))?;
        let gt = gt.min(1000);
        let bin = if gt <= 10 { gt as usize } else { 11 };
        counts[bin] += 1;
    }
    let n = records.len() as f64;
    let mut bins = [0.0; 12];
    for (b, &c) in bins.iter_mut().zip(counts.iter()) {
        *b = c as f64 / n;
    }
    Ok(GtHistogram { bins })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pc: u64) -> InstructionRecord {
        InstructionRecord {
            pc,
            mem_addr: 0,
            opclass: OpClass::IntAlu as u16,
            dst: RegRef::int(1),
            src1: RegRef::int(2),
            src2: RegRef::NONE,
            flags: 0,
            gt_cycles: Some(0),
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        let n = write_trace(&[], false, DEFAULT_EPOCH_LEN, &mut buf).unwrap();
        assert_eq!(n, 32);
        assert_eq!(buf.len(), 32);
        let (labeled, epoch_len, records) = read_trace(&mut buf.as_slice()).unwrap();
        assert!(!labeled);
        assert_eq!(epoch_len, DEFAULT_EPOCH_LEN);
        assert!(records.is_empty());
    }

    #[test]
    fn three_records_serialize_to_128_bytes() {
        let records = vec![rec(0), rec(4), rec(8)];
        let mut buf = Vec::new();
        let n = write_trace(&records, true, DEFAULT_EPOCH_LEN, &mut buf).unwrap();
        assert_eq!(n, 32 + 3 * 32);
        assert_eq!(buf.len(), 128);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut buf = Vec::new();
        write_trace(&[rec(0)], false, DEFAULT_EPOCH_LEN, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_trace(&mut buf.as_slice()), Err(TraceError::BadMagic)));
    }

    #[test]
    fn truncated_body_is_rejected() {
        let mut buf = Vec::new();
        write_trace(&[rec(0), rec(4)], false, DEFAULT_EPOCH_LEN, &mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(
            read_trace(&mut buf.as_slice()),
            Err(TraceError::Truncated { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn epoch_slice_discards_trailing_partial() {
        let records: Vec<_> = (0..10).map(|i| rec(i * 4)).collect();
        assert_eq!(epoch_slice(&records, 3).len(), 3);
        assert_eq!(epoch_slice(&records[..9], 100_000).len(), 0);
        let epochs = epoch_slice(&records, 3);
        assert_eq!(epochs[2].records[2].pc, 8 * 4);
    }

    #[test]
    fn signature_of_empty_pc_sequence_is_sha256_of_empty() {
        let sig = epoch_signature(Epoch { records: &[] });
        assert_eq!(
            sig.to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn signature_of_single_zero_pc_matches_independent_digest() {
        let records = [rec(0)];
        let sig = epoch_signature(Epoch { records: &records });
        // Independent route: hash the eight zero bytes directly.
        let expected: [u8; 32] = Sha256::digest([0u8; 8]).into();
        assert_eq!(sig.digest, expected);
    }

    #[test]
    fn signature_depends_only_on_pcs() {
        let a = [rec(0), rec(4)];
        let mut b = a;
        b[1].gt_cycles = Some(99);
        b[1].opclass = OpClass::IntMul as u16;
        b[1].dst = RegRef::int(7);
        assert_eq!(
            epoch_signature(Epoch { records: &a }),
            epoch_signature(Epoch { records: &b })
        );
        let mut c = a;
        c[1].pc = 8;
        assert_ne!(
            epoch_signature(Epoch { records: &a }),
            epoch_signature(Epoch { records: &c })
        );
    }

    #[test]
    fn gt_histogram_counts_directly() {
        let mut records: Vec<_> = [0u32, 0, 1, 11].iter().map(|&g| rec(g as u64)).collect();
        for (r, g) in records.iter_mut().zip([0u32, 0, 1, 11]) {
            r.gt_cycles = Some(g);
        }
        let h = gt_histogram(&records).unwrap();
        assert_eq!(h.bins[0], 0.5);
        assert_eq!(h.bins[1], 0.25);
        assert_eq!(h.bins[11], 0.25);
        assert!((h.bins.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(gt_histogram(&[]).is_err());
    }

    #[test]
    fn invalid_records_are_rejected() {
        let mut bad = rec(0);
        bad.opclass = 16;
        let mut buf = Vec::new();
        assert!(write_trace(&[bad], false, DEFAULT_EPOCH_LEN, &mut buf).is_err());

        let mut bad = rec(0);
        bad.mem_addr = 64; // has_mem clear
        assert!(bad.validate().is_err());

        let mut bad = rec(0);
        bad.flags = FLAG_HAS_MEM | FLAG_IS_LOAD | FLAG_IS_STORE;
        assert!(bad.validate().is_err());
    }
}
