//! Property tests for the binary trace container.

use cyclecast_core::trace::{
    read_trace, write_trace, InstructionRecord, RegRef, FLAG_HAS_MEM, FLAG_IS_BRANCH,
    FLAG_IS_LOAD, FLAG_IS_STORE,
};
use proptest::prelude::*;

fn arb_regref() -> impl Strategy<Value = RegRef> {
    prop_oneof![
        Just(RegRef::NONE),
        (0u8..4, 0u8..64).prop_map(|(reg_class, reg_index)| RegRef { reg_class, reg_index }),
    ]
}

fn arb_record(labeled: bool) -> impl Strategy<Value = InstructionRecord> {
    (
        any::<u64>(),
        any::<u64>(),
        0u16..16,
        arb_regref(),
        arb_regref(),
        arb_regref(),
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        0u32..2000,
    )
        .prop_map(
            move |(pc, mem_addr, opclass, dst, src1, src2, mem, load, branch, y)| {
                let mut flags = 0u8;
                if mem {
                    flags |= FLAG_HAS_MEM;
                    flags |= if load { FLAG_IS_LOAD } else { FLAG_IS_STORE };
                }
                if branch && !mem {
                    flags |= FLAG_IS_BRANCH;
                }
                InstructionRecord {
                    pc,
                    mem_addr: if mem { mem_addr } else { 0 },
                    opclass,
                    dst,
                    src1,
                    src2,
                    flags,
                    gt_cycles: labeled.then_some(y),
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labeled_traces_roundtrip(records in prop::collection::vec(arb_record(true), 0..200),
                                epoch_len in 1u32..10_000) {
        let mut buf = Vec::new();
        let n = write_trace(&records, true, epoch_len, &mut buf).unwrap();
        prop_assert_eq!(n as usize, 32 + 32 * records.len());
        prop_assert_eq!(buf.len(), 32 + 32 * records.len());
        let (labeled, e, back) = read_trace(&mut &buf[..]).unwrap();
        prop_assert!(labeled);
        prop_assert_eq!(e, epoch_len);
        prop_assert_eq!(back, records);
    }

    #[test]
    fn unlabeled_traces_roundtrip(records in prop::collection::vec(arb_record(false), 0..200)) {
        let mut buf = Vec::new();
        write_trace(&records, false, 1000, &mut buf).unwrap();
        let (labeled, _, back) = read_trace(&mut &buf[..]).unwrap();
        prop_assert!(!labeled);
        prop_assert_eq!(back, records);
    }

    #[test]
    fn corrupting_any_header_byte_is_detected_or_preserves_consistency(
        records in prop::collection::vec(arb_record(true), 1..20),
        byte in 0usize..8,
        bit in 0u8..8,
    ) {
        let mut buf = Vec::new();
        write_trace(&records, true, 100, &mut buf).unwrap();
        // Flip a bit in magic or version: must be rejected.
        buf[byte % 6] ^= 1 << bit;
        prop_assert!(read_trace(&mut &buf[..]).is_err());
    }
}
