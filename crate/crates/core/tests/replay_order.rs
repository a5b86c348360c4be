use proptest::prelude::*;

use sra_core::protection::{unprotect, CipherProfile, FrameSender, ProtectedFrame, Rejection, ReplayState};
use sra_core::sensor::{generate_frame, BayerOrder};
use sra_core::session::SessionKeys;

fn frames(profile: CipherProfile, n: u64) -> (SessionKeys, Vec<ProtectedFrame>) {
    let keys = SessionKeys {
        aead_key: [0x11; 16],
        mac_key: [0x22; 16],
        nonce_salt: 0x0BAD_CAFE,
        session_id: 0x5E55,
    };
    let mut sender = FrameSender::new(keys.clone(), profile);
    let mut raw = generate_frame(1, 8, 2, 0, BayerOrder::Rggb).unwrap();
    let out = (1..=n)
        .map(|counter| {
            raw.frame_counter = counter;
            sender.protect(&raw).unwrap()
        })
        .collect();
    (keys, out)
}

proptest! {
    /// Any delivery order: a frame is accepted iff its sequence exceeds every
    /// sequence accepted before it.
    #[test]
    fn accepted_sequences_strictly_increase(
        order in prop::collection::vec(0usize..12, 1..40),
        efficiency in any::<bool>(),
    ) {
        let profile = if efficiency {
            CipherProfile::EfficiencyIntegrityOnly
        } else {
            CipherProfile::PerformanceAead
        };
        let (keys, frames) = frames(profile, 12);
        let mut replay = ReplayState::new();
        let mut highest = 0u64;
        for i in order {
            let pf = &frames[i];
            let seq = pf.sequence();
            match unprotect(pf, &keys, &mut replay) {
                Ok(raw) => {
                    prop_assert!(seq > highest);
                    prop_assert_eq!(raw.frame_counter, seq);
                    highest = seq;
                }
                Err(Rejection::ReplayRejected { highest: h, .. }) => {
                    prop_assert!(seq <= highest);
                    prop_assert_eq!(h, highest);
                }
                Err(other) => prop_assert!(false, "unexpected rejection {other:?}"),
            }
            prop_assert_eq!(replay.highest_accepted(), (highest > 0).then_some(highest));
        }
    }
}
