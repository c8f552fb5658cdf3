use std::collections::VecDeque;

use proptest::prelude::*;
use taskpar::channel::{ChannelState, Token, TryWriteError};

#[derive(Clone, Debug)]
enum Op {
    Write(u64),
    Close,
    Read,
    Peek,
    Eot,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u64..600).prop_map(Op::Write),
        1 => Just(Op::Close),
        3 => Just(Op::Read),
        1 => Just(Op::Peek),
        1 => Just(Op::Eot),
    ]
}

/// Applies `ops` to both the channel and a reference queue and compares
/// every observable result.
fn check(cap: usize, width: u32, ops: &[Op]) -> Result<(), TestCaseError> {
    let mut ch = ChannelState::new(cap, width);
    let mut model: VecDeque<Token> = VecDeque::new();
    let limit = 1u64 << width;
    for op in ops {
        match *op {
            Op::Write(v) => {
                let res = ch.try_write(Token::Data(v));
                if v >= limit {
                    let mismatch = matches!(res, Err(TryWriteError::TypeMismatch { .. }));
                    prop_assert!(mismatch);
                } else if model.len() == cap {
                    prop_assert_eq!(res, Err(TryWriteError::Full(Token::Data(v))));
                } else {
                    prop_assert_eq!(res, Ok(()));
                    model.push_back(Token::Data(v));
                }
            }
            Op::Close => {
                let full = model.len() == cap;
                prop_assert_eq!(ch.close().is_err(), full);
                if !full {
                    model.push_back(Token::Eot);
                }
            }
            Op::Read => prop_assert_eq!(ch.try_read().ok(), model.pop_front()),
            Op::Peek => prop_assert_eq!(ch.try_peek().ok(), model.front().copied()),
            Op::Eot => prop_assert_eq!(ch.try_eot().ok(), model.front().map(|t| t.is_eot())),
        }
        let before = ch.clone();
        let _ = ch.try_peek();
        let _ = ch.try_eot();
        prop_assert_eq!(&ch, &before, "peek/eot must not mutate");
        prop_assert_eq!(ch.len(), model.len());
        prop_assert!(ch.len() <= cap);
        prop_assert_eq!(ch.is_full(), model.len() == cap);
        prop_assert!(ch.contents().eq(model.iter().copied()));
    }
    let s = ch.stats();
    prop_assert_eq!(s.total_written - s.total_read, ch.len() as u64);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100_000))]

    #[test]
    fn capacity_1_matches_reference(ops in prop::collection::vec(op(), 1..24)) {
        check(1, 8, &ops)?;
    }

    #[test]
    fn capacity_2_matches_reference(ops in prop::collection::vec(op(), 1..24)) {
        check(2, 8, &ops)?;
    }

    #[test]
    fn capacity_8_matches_reference(ops in prop::collection::vec(op(), 1..40)) {
        check(8, 8, &ops)?;
    }
}

proptest! {
    #[test]
    fn unbounded_mode_never_reports_full(n in 1usize..200, cap in 1usize..4) {
        let mut ch = ChannelState::new(cap, 64);
        ch.set_bounded(false);
        for v in 0..n as u64 {
            prop_assert_eq!(ch.try_write(Token::Data(v)), Ok(()));
        }
        prop_assert_eq!(ch.len(), n);
        prop_assert_eq!(ch.stats().max_occupancy, n);
    }
}
