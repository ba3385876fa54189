//! Desk-scale out-of-order teacher simulator.
//!
//! In-order dispatch, out-of-order completion, in-order retirement at most
//! `width` per cycle. Dispatch requires a ROB slot, a destination physical
//! register (when the instruction writes one), and an LSQ slot for memory
//! ops; memory ops contend for `ls_units` issue ports. Load/store latency
//! comes from a two-level set-associative LRU cache model; branches go
//! through a 2-bit predictor with a fixed misprediction bubble.
//!
//! The ground-truth label of instruction `i` is its retirement latency:
//! `retire_cycle[i] - retire_cycle[i-1]`, with the first label being the
//! absolute retire cycle.

mod cache;
mod workload;

pub use cache::{Cache, LINE_BYTES};
pub use workload::{gen_workload, WorkloadKind, WorkloadSpec};

use crate::trace::{InstructionRecord, RegRef};
use std::collections::HashMap;
use std::collections::VecDeque;

/// Per-opclass execution latencies plus memory-level latencies, in cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyTable {
    pub opclass: [u32; 16],
    pub l1_hit_cycles: u32,
    pub l2_hit_cycles: u32,
    pub dram_cycles: u32,
}

impl Default for LatencyTable {
    fn default() -> Self {
        // IntAlu IntMul IntDiv FAdd FMul FDiv Load Store Branch Call Return
        // Nop SimdAlu Fence CsrOp Other
        LatencyTable {
            opclass: [1, 3, 12, 4, 4, 12, 1, 1, 1, 1, 1, 1, 2, 1, 3, 1],
            l1_hit_cycles: 4,
            l2_hit_cycles: 14,
            dram_cycles: 120,
        }
    }
}

/// Teacher-simulator parameters for one processor configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroarchConfig {
    pub name: String,
    pub width: u32,
    pub ls_units: u32,
    pub lsq_entries: u32,
    pub num_phys_regs: u32,
    pub rob_size: u32,
    pub l1d_kib: u32,
    pub l1i_kib: u32,
    pub l2_mib: u32,
    pub latency: LatencyTable,
}

impl MicroarchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.width < 1 || self.ls_units < 1 || self.lsq_entries < 1 {
            return Err("width, ls_units, lsq_entries must be >= 1".into());
        }
        if self.num_phys_regs < 1 || self.rob_size < 1 {
            return Err("num_phys_regs and rob_size must be >= 1".into());
        }
        if self.rob_size < self.width {
            return Err("rob_size must be >= width".into());
        }
        if self.lsq_entries < self.ls_units {
            return Err("lsq_entries must be >= ls_units".into());
        }
        if self.l1d_kib < 1 || self.l1i_kib < 1 || self.l2_mib < 1 {
            return Err("cache sizes must be >= 1".into());
        }
        Ok(())
    }

    fn base(name: &str) -> MicroarchConfig {
        MicroarchConfig {
            name: name.to_string(),
            width: 8,
            ls_units: 1,
            lsq_entries: 32,
            num_phys_regs: 256,
            rob_size: 192,
            l1d_kib: 64,
            l1i_kib: 64,
            l2_mib: 8,
            latency: LatencyTable::default(),
        }
    }
}

/// The five evaluated processor configurations, in the canonical pair-listing
/// order: 4w+mem, 8w, rob, lsq, 6w+ls.
pub fn default_configs() -> Vec<MicroarchConfig> {
    let mut fourw_mem = MicroarchConfig::base("4w+mem");
    fourw_mem.width = 4;
    fourw_mem.ls_units = 2;
    fourw_mem.l1d_kib = 128;

    let eightw = MicroarchConfig::base("8w");

    let mut rob = MicroarchConfig::base("rob");
    rob.rob_size = 384;
    rob.num_phys_regs = 512;

    let mut lsq = MicroarchConfig::base("lsq");
    lsq.ls_units = 2;
    lsq.lsq_entries = 64;

    let mut sixw_ls = MicroarchConfig::base("6w+ls");
    sixw_ls.width = 6;
    sixw_ls.ls_units = 2;

    vec![fourw_mem, eightw, rob, lsq, sixw_ls]
}

pub fn config_by_name(name: &str) -> Option<MicroarchConfig> {
    default_configs().into_iter().find(|c| c.name == name)
}

/// Observability counters the property tests rely on.
#[derive(Debug, Clone, Default)]
pub struct SimAudit {
    pub total_cycles: u64,
    pub max_rob_occupancy: u32,
    pub max_lsq_occupancy: u32,
    pub retire_cycles: Vec<u64>,
    pub l1d_hits: u64,
    pub l1d_misses: u64,
    pub l2_hits: u64,
    pub dram_accesses: u64,
    pub branch_mispredicts: u64,
    pub branches: u64,
}

const MISPREDICT_BUBBLE: u64 = 12;
const ARCH_REGS: u32 = 64;
const PREDICTOR_ENTRIES: usize = 1024;

/// Branch outcome shared between workload intent and the simulator: pcs with
/// bit 2 set resolve pseudo-randomly per occurrence, others are always taken.
fn branch_outcome(pc: u64, occurrence: u64) -> bool {
    if pc & 4 == 0 {
        return true;
    }
    let mut x = pc ^ occurrence.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (x ^ (x >> 31)) & 1 == 1
}

struct InFlight {
    complete: u64,
    is_mem: bool,
    writes_reg: bool,
}

/// Labels `records` with ground-truth retirement latencies under `config`.
pub fn simulate(records: &[InstructionRecord], config: &MicroarchConfig) -> Vec<InstructionRecord> {
    simulate_with_audit(records, config).0
}

pub fn simulate_with_audit(
    records: &[InstructionRecord],
    config: &MicroarchConfig,
) -> (Vec<InstructionRecord>, SimAudit) {
    config.validate().expect("invalid microarch config");
    let mut audit = SimAudit::default();
    if records.is_empty() {
        return (Vec::new(), audit);
    }

    let mut l1d = Cache::new(config.l1d_kib as u64 * 1024, 8);
    let mut l1i = Cache::new(config.l1i_kib as u64 * 1024, 8);
    let mut l2 = Cache::new(config.l2_mib as u64 * 1024 * 1024, 8);
    let lat = &config.latency;

    let mut rob: VecDeque<InFlight> = VecDeque::with_capacity(config.rob_size as usize);
    let mut free_regs = config.num_phys_regs.saturating_sub(ARCH_REGS).max(config.width);
    let mut free_lsq = config.lsq_entries;
    let mut port_free = vec![0u64; config.ls_units as usize];
    let mut reg_ready: HashMap<RegRef, u64> = HashMap::new();
    let mut predictor = vec![2u8; PREDICTOR_ENTRIES];
    let mut branch_occurrence: HashMap<u64, u64> = HashMap::new();

    let mut retire_cycles: Vec<u64> = Vec::with_capacity(records.len());
    let mut fetch_ready: u64 = 0;
    let mut next = 0usize;
    let mut cycle: u64 = 0;

    while retire_cycles.len() < records.len() {
        // Retire: in order, completed, at most `width` per cycle.
        let mut retired = 0;
        while retired < config.width {
            match rob.front() {
                Some(head) if head.complete <= cycle => {
                    let head = rob.pop_front().unwrap();
                    if head.writes_reg {
                        free_regs += 1;
                    }
                    if head.is_mem {
                        free_lsq += 1;
                    }
                    retire_cycles.push(cycle);
                    retired += 1;
                }
                _ => break,
            }
        }

        // Dispatch: in order, bounded by width, ROB, regs, LSQ, fetch stalls.
        let mut dispatched = 0;
        while dispatched < config.width && next < records.len() && cycle >= fetch_ready {
            let r = &records[next];
            let writes_reg = !r.dst.is_unused();
            let is_mem = r.has_mem();
            if rob.len() >= config.rob_size as usize
                || (writes_reg && free_regs == 0)
                || (is_mem && free_lsq == 0)
            {
                break;
            }

            // Instruction fetch through the L1I; a miss stalls the front end.
            if !l1i.access(r.pc) {
                let penalty = if l2.access(r.pc) {
                    lat.l2_hit_cycles
                } else {
                    audit.dram_accesses += 1;
                    lat.dram_cycles
                };
                fetch_ready = cycle + penalty as u64;
                break;
            }

            let mut start = cycle;
            for src in [r.src1, r.src2] {
                if !src.is_unused() {
                    if let Some(&rdy) = reg_ready.get(&src) {
                        start = start.max(rdy);
                    }
                }
            }

            let mut mem_lat = 0u64;
            if is_mem {
                // Claim the earliest-free load/store port for one cycle.
                let (pi, &pfree) = port_free
                    .iter()
                    .enumerate()
                    .min_by_key(|&(_, &f)| f)
                    .unwrap();
                start = start.max(pfree);
                port_free[pi] = start + 1;

                mem_lat = if l1d.access(r.mem_addr) {
                    audit.l1d_hits += 1;
                    lat.l1_hit_cycles
                } else {
                    audit.l1d_misses += 1;
                    if l2.access(r.mem_addr) {
                        audit.l2_hits += 1;
                        lat.l2_hit_cycles
                    } else {
                        audit.dram_accesses += 1;
                        lat.dram_cycles
                    }
                } as u64;
            }

            let exec_lat = lat.opclass[(r.opclass as usize).min(15)].max(1) as u64;
            let complete = start + exec_lat + mem_lat;

            if writes_reg {
                free_regs -= 1;
                reg_ready.insert(r.dst, complete);
            }
            if is_mem {
                free_lsq -= 1;
            }
            rob.push_back(InFlight { complete, is_mem, writes_reg });
            audit.max_rob_occupancy = audit.max_rob_occupancy.max(rob.len() as u32);
            let lsq_used = config.lsq_entries - free_lsq;
            audit.max_lsq_occupancy = audit.max_lsq_occupancy.max(lsq_used);

            if r.is_branch() {
                audit.branches += 1;
                let occ = branch_occurrence.entry(r.pc).or_insert(0);
                let taken = branch_outcome(r.pc, *occ);
                *occ += 1;
                let slot = &mut predictor[(r.pc >> 2) as usize % PREDICTOR_ENTRIES];
                let predicted = *slot >= 2;
                if taken {
                    *slot = (*slot + 1).min(3);
                } else {
                    *slot = slot.saturating_sub(1);
                }
                if predicted != taken {
                    audit.branch_mispredicts += 1;
                    fetch_ready = complete + MISPREDICT_BUBBLE;
                    next += 1;
                    break;
                }
            }

            next += 1;
            dispatched += 1;
        }

        cycle += 1;
    }

    audit.total_cycles = *retire_cycles.last().unwrap();
    let mut labeled = records.to_vec();
    let mut prev = 0u64;
    for (rec, &rc) in labeled.iter_mut().zip(retire_cycles.iter()) {
        rec.gt_cycles = Some((rc - prev) as u32);
        prev = rc;
    }
    audit.retire_cycles = retire_cycles;
    (labeled, audit)
}
