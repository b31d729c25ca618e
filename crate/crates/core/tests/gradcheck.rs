mod support;

use bitrain_core::model::Mode;

#[test]
fn gradients_match_finite_differences_eval_mode() {
    support::gradcheck::run(Mode::Eval, 0.1, 1, 500).assert();
}

#[test]
fn gradients_match_finite_differences_with_dropout() {
    support::gradcheck::run(Mode::Train { dropout_seed: 3 }, 0.0, 2, 500).assert();
}
