use ternlstm_core::datagen::{generate, stratified_split, SyntheticSpec};
use ternlstm_core::estimate::{mac_count, MacVariant, Per};
use ternlstm_core::fsm::{estimate_cycles, run_inference, MachineConfig, MemoryBanks};
use ternlstm_core::fxp::QFormat;
use ternlstm_core::model::fixed::{forward_fixed, quantize_sequence, HardwareModel, Luts};
use ternlstm_core::model::NetworkConfig;
use ternlstm_core::quant::Precision;
use ternlstm_core::train::{train, TrainConfig};

#[test]
fn trained_ternary_model_runs_on_the_simulator() {
    let mut spec = SyntheticSpec::sine(3, SyntheticSpec::SINE_ALPHA, 0.3);
    spec.per_class = 20;
    spec.seed = 3;
    let ds = generate(&spec).unwrap();
    let labels: Vec<usize> = ds.sequences.iter().map(|s| s.label).collect();
    let (tr, te) = stratified_split(&labels, 0.7, 3).unwrap();
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.sequences[i].clone()).collect::<Vec<_>>();
    let (train_set, test_set) = (pick(&tr), pick(&te));

    let mut cfg = NetworkConfig::new(spec.window, spec.steps, 1, 12, 3);
    cfg.conv.truncate(1);
    let mut t = TrainConfig::for_precision(Precision::Ternary);
    t.epochs = 5;
    let result = train(&train_set, &test_set, &t, &cfg).unwrap();
    assert_eq!(result.history.len(), 5);

    let eff = result.params.effective(Precision::Full, true);
    let hw = HardwareModel::from_params(&eff, &cfg, Precision::Ternary, QFormat::Q4_8).unwrap();
    let luts = Luts::default();
    let mc = MachineConfig::default();
    let banks = MemoryBanks::load(hw.clone(), &mc).unwrap();
    let analytic = estimate_cycles(&cfg, &mc, 2);
    for seq in &test_set {
        let golden = forward_fixed(&hw, &luts, seq).unwrap();
        let r = run_inference(&quantize_sequence(seq, QFormat::Q4_8), &banks, &mc, None).unwrap();
        assert_eq!(r.logits, golden.logits);
        assert_eq!(r.report.window_cycles, analytic.window_cycles);
        assert_eq!(r.report.executed_macs, mac_count(&cfg, Per::Sequence, MacVariant::True));
    }
}
