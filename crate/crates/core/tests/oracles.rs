mod support;

#[test]
fn bleu_matches_position_scanning() {
    support::bleu_oracle::run(50).assert();
}

#[test]
fn sign_test_matches_exact_binomial() {
    support::sign_oracle::run(30).assert();
}

#[test]
fn aer_matches_set_arithmetic() {
    support::aer_oracle::run(200).assert();
}

#[test]
fn beam_matches_enumeration() {
    support::beam_oracle::run(100).assert();
}
