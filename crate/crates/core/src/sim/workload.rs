//! Synthetic workload generation.
//!
//! Each kind stresses a different part of the pipeline: `LoopAlu` register
//! dependency chains, `PointerChase` dependent load chains over a configurable
//! working set, `Streaming` sequential memory traffic, `Branchy`
//! data-dependent branches, and `Mixed` an interleaving of all four.
//!
//! Branch outcome convention shared with the simulator: a branch at a pc with
//! bit 2 set resolves pseudo-randomly per occurrence; bit 2 clear means
//! always-taken (predictable).

use crate::trace::{
    InstructionRecord, OpClass, RegRef, FLAG_HAS_MEM, FLAG_IS_BRANCH, FLAG_IS_LOAD, FLAG_IS_STORE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadKind {
    LoopAlu,
    PointerChase,
    Streaming,
    Branchy,
    Mixed,
}

impl WorkloadKind {
    pub fn parse(s: &str) -> Option<WorkloadKind> {
        Some(match s {
            "loop_alu" => WorkloadKind::LoopAlu,
            "pointer_chase" => WorkloadKind::PointerChase,
            "streaming" => WorkloadKind::Streaming,
            "branchy" => WorkloadKind::Branchy,
            "mixed" => WorkloadKind::Mixed,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            WorkloadKind::LoopAlu => "loop_alu",
            WorkloadKind::PointerChase => "pointer_chase",
            WorkloadKind::Streaming => "streaming",
            WorkloadKind::Branchy => "branchy",
            WorkloadKind::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub instruction_count: usize,
    pub seed: u64,
    pub footprint_bytes: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.instruction_count < 1 {
            return Err("instruction_count must be >= 1".into());
        }
        if self.footprint_bytes < 64 {
            return Err("footprint_bytes must be >= 64".into());
        }
        Ok(())
    }
}

fn alu(pc: u64, op: OpClass, dst: RegRef, src1: RegRef, src2: RegRef) -> InstructionRecord {
    InstructionRecord {
        pc,
        mem_addr: 0,
        opclass: op as u16,
        dst,
        src1,
        src2,
        flags: 0,
        gt_cycles: None,
    }
}

fn load(pc: u64, addr: u64, dst: RegRef, addr_src: RegRef) -> InstructionRecord {
    InstructionRecord {
        pc,
        mem_addr: addr,
        opclass: OpClass::Load as u16,
        dst,
        src1: addr_src,
        src2: RegRef::NONE,
        flags: FLAG_HAS_MEM | FLAG_IS_LOAD,
        gt_cycles: None,
    }
}

fn store(pc: u64, addr: u64, data_src: RegRef, addr_src: RegRef) -> InstructionRecord {
    InstructionRecord {
        pc,
        mem_addr: addr,
        opclass: OpClass::Store as u16,
        dst: RegRef::NONE,
        src1: addr_src,
        src2: data_src,
        flags: FLAG_HAS_MEM | FLAG_IS_STORE,
        gt_cycles: None,
    }
}

fn branch(pc: u64, cond_src: RegRef) -> InstructionRecord {
    InstructionRecord {
        pc,
        mem_addr: 0,
        opclass: OpClass::Branch as u16,
        dst: RegRef::NONE,
        src1: cond_src,
        src2: RegRef::NONE,
        flags: FLAG_IS_BRANCH,
        gt_cycles: None,
    }
}

/// State for one sub-generator so `Mixed` can interleave kinds without
/// restarting them.
struct GenState {
    rng: ChaCha8Rng,
    pos: u64,
    chase_chain: Vec<u32>,
    chase_at: u32,
}

impl GenState {
    fn new(seed: u64, kind: WorkloadKind, footprint_bytes: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chase_chain = if matches!(kind, WorkloadKind::PointerChase) {
            build_chase_chain(&mut rng, footprint_bytes)
        } else {
            Vec::new()
        };
        GenState { rng, pos: 0, chase_chain, chase_at: 0 }
    }
}

/// Random cyclic permutation over the cache lines of the footprint; following
/// it visits every line once per lap in a data-dependent order.
fn build_chase_chain(rng: &mut ChaCha8Rng, footprint_bytes: u64) -> Vec<u32> {
    let lines = (footprint_bytes / 64).max(1) as u32;
    let mut order: Vec<u32> = (0..lines).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut next = vec![0u32; lines as usize];
    for i in 0..order.len() {
        next[order[i] as usize] = order[(i + 1) % order.len()];
    }
    next
}

const PC_REGION: u64 = 0x1_0000;

fn region_base(kind: WorkloadKind) -> u64 {
    0x40_0000
        + PC_REGION
            * match kind {
                WorkloadKind::LoopAlu => 0,
                WorkloadKind::PointerChase => 1,
                WorkloadKind::Streaming => 2,
                WorkloadKind::Branchy => 3,
                WorkloadKind::Mixed => 4,
            }
}

fn data_base(kind: WorkloadKind) -> u64 {
    0x1000_0000
        + 0x100_0000
            * match kind {
                WorkloadKind::LoopAlu => 0,
                WorkloadKind::PointerChase => 1,
                WorkloadKind::Streaming => 2,
                WorkloadKind::Branchy => 3,
                WorkloadKind::Mixed => 4,
            }
}

fn emit_block(
    kind: WorkloadKind,
    st: &mut GenState,
    footprint_bytes: u64,
    count: usize,
    out: &mut Vec<InstructionRecord>,
) {
    let base = region_base(kind);
    let dbase = data_base(kind);
    match kind {
        WorkloadKind::LoopAlu => {
            // 16-instruction loop body: a dependency chain through r1 plus
            // independent work on r8..r15.
            for _ in 0..count {
                let i = st.pos % 16;
                let pc = base + i * 4;
                let rec = match i {
                    0 => alu(pc, OpClass::IntMul, RegRef::int(1), RegRef::int(1), RegRef::int(2)),
                    1..=5 => {
                        alu(pc, OpClass::IntAlu, RegRef::int(1), RegRef::int(1), RegRef::int(3))
                    }
                    6 => alu(pc, OpClass::IntDiv, RegRef::int(4), RegRef::int(1), RegRef::int(2)),
                    7..=13 => {
                        let r = 8 + (i as u8 - 7);
                        alu(pc, OpClass::IntAlu, RegRef::int(r), RegRef::int(r), RegRef::int(2))
                    }
                    14 => {
                        alu(pc, OpClass::FloatMul, RegRef::float(1), RegRef::float(1), RegRef::float(2))
                    }
                    // Dedicated backedge pc with bit 2 clear: predictable.
                    _ => branch(base + 0x100, RegRef::int(1)),
                };
                out.push(rec);
                st.pos += 1;
            }
        }
        WorkloadKind::PointerChase => {
            // load r1 <- [r1]; two dependent ALU ops; repeat.
            for _ in 0..count {
                let i = st.pos % 4;
                let pc = base + i * 4;
                let rec = match i {
                    0 => {
                        let addr = dbase + st.chase_at as u64 * 64;
                        st.chase_at = st.chase_chain[st.chase_at as usize];
                        load(pc, addr, RegRef::int(1), RegRef::int(1))
                    }
                    1 => alu(pc, OpClass::IntAlu, RegRef::int(2), RegRef::int(1), RegRef::int(2)),
                    2 => alu(pc, OpClass::IntAlu, RegRef::int(3), RegRef::int(2), RegRef::int(3)),
                    _ => branch(base + 0x100, RegRef::int(3)),
                };
                out.push(rec);
                st.pos += 1;
            }
        }
        WorkloadKind::Streaming => {
            // Sequential loads with an occasional store. One induction-variable
            // update per iteration (r10); the other ALU slots are independent
            // accumulators, as in a real streaming kernel.
            let lines = (footprint_bytes / 64).max(1);
            for _ in 0..count {
                let i = st.pos % 8;
                let pc = base + i * 4;
                let line = (st.pos / 2) % lines;
                let addr = dbase + line * 64;
                let rec = match i {
                    0 | 2 | 4 => load(pc, addr, RegRef::int((2 + i % 4) as u8), RegRef::int(10)),
                    1 => alu(pc, OpClass::IntAlu, RegRef::int(10), RegRef::int(10), RegRef::int(11)),
                    3 => alu(pc, OpClass::IntAlu, RegRef::int(12), RegRef::int(12), RegRef::int(2)),
                    5 => alu(pc, OpClass::IntAlu, RegRef::int(13), RegRef::int(13), RegRef::int(4)),
                    6 => store(pc, addr, RegRef::int(2), RegRef::int(10)),
                    _ => branch(base + 0x100, RegRef::int(10)),
                };
                out.push(rec);
                st.pos += 1;
            }
        }
        WorkloadKind::Branchy => {
            // Alternating compute and branches; half of the branch pcs carry
            // bit 2 set, which the simulator resolves pseudo-randomly.
            for _ in 0..count {
                let i = st.pos % 8;
                let pc = base + i * 4;
                let rec = match i {
                    1 | 5 => {
                        // Two branch slots; each occurrence randomly takes the
                        // predictable (bit 2 clear) or unpredictable pc.
                        let unpredictable = st.rng.gen_bool(0.5);
                        let slot = if i == 1 { 0x100 } else { 0x108 };
                        let bpc = base + slot + if unpredictable { 4 } else { 0 };
                        branch(bpc, RegRef::int(1))
                    }
                    3 => alu(pc, OpClass::IntMul, RegRef::int(1), RegRef::int(1), RegRef::int(2)),
                    _ => alu(pc, OpClass::IntAlu, RegRef::int(1), RegRef::int(1), RegRef::int(3)),
                };
                out.push(rec);
                st.pos += 1;
            }
        }
        WorkloadKind::Mixed => unreachable!("mixed interleaves the other kinds"),
    }
}

/// Deterministic (seeded) workload generation. Records come back unlabeled.
pub fn gen_workload(spec: &WorkloadSpec) -> Vec<InstructionRecord> {
    spec.validate().expect("invalid workload spec");
    let mut out = Vec::with_capacity(spec.instruction_count);
    match spec.kind {
        WorkloadKind::Mixed => {
            // Compute-weighted interleaving of 512-instruction blocks. The
            // pattern leans toward the high-ILP kinds so the aggregate looks
            // like a typical compute-dominated trace (mode-at-0 retirement
            // deltas on a wide machine) with memory- and branch-bound phases
            // mixed in.
            let kinds = [
                WorkloadKind::LoopAlu,
                WorkloadKind::PointerChase,
                WorkloadKind::Streaming,
                WorkloadKind::Branchy,
            ];
            // Indices into `kinds`: loop x6, streaming x2, chase x1, branchy x1.
            let pattern = [0usize, 2, 0, 1, 0, 0, 2, 0, 3, 0];
            let mut states: Vec<GenState> = kinds
                .iter()
                .enumerate()
                .map(|(i, &k)| GenState::new(spec.seed.wrapping_add(i as u64), k, spec.footprint_bytes))
                .collect();
            let mut turn = 0;
            while out.len() < spec.instruction_count {
                let n = 512.min(spec.instruction_count - out.len());
                let k = pattern[turn % pattern.len()];
                emit_block(kinds[k], &mut states[k], spec.footprint_bytes, n, &mut out);
                turn += 1;
            }
        }
        kind => {
            let mut st = GenState::new(spec.seed, kind, spec.footprint_bytes);
            emit_block(kind, &mut st, spec.footprint_bytes, spec.instruction_count, &mut out);
        }
    }
    debug_assert!(out.iter().all(|r| r.validate().is_ok()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = WorkloadSpec {
            kind: WorkloadKind::LoopAlu,
            instruction_count: 100,
            seed: 1,
            footprint_bytes: 4096,
        };
        assert_eq!(gen_workload(&spec), gen_workload(&spec));
    }

    #[test]
    fn all_kinds_emit_valid_records_of_requested_length() {
        for kind in [
            WorkloadKind::LoopAlu,
            WorkloadKind::PointerChase,
            WorkloadKind::Streaming,
            WorkloadKind::Branchy,
            WorkloadKind::Mixed,
        ] {
            let spec = WorkloadSpec {
                kind,
                instruction_count: 3000,
                seed: 9,
                footprint_bytes: 1 << 16,
            };
            let recs = gen_workload(&spec);
            assert_eq!(recs.len(), 3000);
            for r in &recs {
                r.validate().unwrap();
                assert!(r.gt_cycles.is_none());
            }
        }
    }

    #[test]
    fn pointer_chase_visits_every_line() {
        let spec = WorkloadSpec {
            kind: WorkloadKind::PointerChase,
            instruction_count: 16 * 4,
            seed: 5,
            footprint_bytes: 16 * 64,
        };
        let recs = gen_workload(&spec);
        let mut seen: Vec<u64> = recs
            .iter()
            .filter(|r| r.is_load())
            .map(|r| (r.mem_addr - data_base(WorkloadKind::PointerChase)) / 64)
            .collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 16);
    }
}
