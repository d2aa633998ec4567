use proptest::prelude::*;

use purm::rl::{PenaltyKind, RmKind};
use purm_cli::{CliError, ExperimentConfig};

fn rm_kind() -> impl Strategy<Value = RmKind> {
    prop_oneof![
        Just(RmKind::Btrm),
        Just(RmKind::Purm),
        Just(RmKind::BteMean),
        Just(RmKind::BteWco),
        Just(RmKind::BteUwo),
    ]
}

fn penalty_kind() -> impl Strategy<Value = PenaltyKind> {
    prop_oneof![
        Just(PenaltyKind::None),
        Just(PenaltyKind::Bc),
        Just(PenaltyKind::Sigma),
        Just(PenaltyKind::Sample),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn valid_configs_survive_a_toml_round_trip(
        seeds in prop::collection::vec(any::<u64>(), 1..4),
        dim in 1usize..9,
        rho in 0.0..=1.0f64,
        offset in -4.0..4.0f64,
        lr in 1e-5..1e-1f64,
        steps in 1usize..5000,
        lambda in 0.0..100.0f64,
    ) {
        let mut cfg = ExperimentConfig {
            seeds,
            ..ExperimentConfig::default()
        };
        cfg.world.dim = dim;
        cfg.data.reversal_ratio = rho;
        cfg.data.shift_offset = offset;
        cfg.train.learning_rate = lr;
        cfg.rl.steps = steps;
        cfg.rl.lambda = lambda;
        prop_assume!(cfg.validate().is_ok());
        let text = toml::to_string(&cfg).unwrap();
        prop_assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn penalties_are_accepted_only_with_purm(rm in rm_kind(), penalty in penalty_kind(), lambda in 0.0..20.0f64) {
        let mut cfg = ExperimentConfig::default();
        cfg.rl.rm_kind = rm;
        cfg.rl.penalty_kind = penalty;
        cfg.rl.lambda = lambda;
        let ok = (penalty == PenaltyKind::None && lambda == 0.0) || (penalty != PenaltyKind::None && rm == RmKind::Purm);
        match cfg.validate() {
            Ok(()) => prop_assert!(ok),
            Err(e) => {
                prop_assert!(!ok);
                prop_assert!(matches!(e, CliError::Usage(_)));
                prop_assert_eq!(e.exit_code(), 2);
            }
        }
    }

    #[test]
    fn misspelled_keys_are_rejected(section in prop::sample::select(vec!["world", "data", "model", "train", "uncertainty", "rl", "output"]), key in "[a-z]{3,8}_x") {
        let doc = format!("[{section}]\n{key} = 1\n");
        prop_assert!(matches!(ExperimentConfig::parse(&doc), Err(CliError::Usage(_))));
    }
}
