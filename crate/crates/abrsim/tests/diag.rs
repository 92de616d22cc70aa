use abrsim::predictor::net::{ForwardCache, EXIT_CLASS};
use abrsim::predictor::*;
use abrsim::synth::*;

#[test]
#[ignore]
fn diagnose_fp() {
    let rows = read_log_csv("/tmp/synth2/rows.csv").unwrap();
    let manifest = abrsim::VideoManifest::default_ladder(48);
    let scale = scale_from_logs(&rows, &manifest);

    // rebuild rows WITH side info (user, stall, survived-band-before, exited-before)
    let mut side = Vec::new();
    let mut state = UserState::new();
    let mut cur: Option<String> = None;
    let mut survived_band = false;
    let mut exited_before = false;
    let mut stall_events = 0u32;
    let mut train_rows = Vec::new();
    for row in &rows {
        if cur.as_deref() != Some(row.user_id.as_str()) {
            state = UserState::new();
            cur = Some(row.user_id.clone());
            survived_band = false;
            exited_before = false;
            stall_events = 0;
        }
        state.observe_segment(row.level, row.bitrate_kbps as f64, row.throughput_kbps, row.stall_s, row.switched, 1.0);
        if row.stall_s > 0.0 {
            stall_events += 1;
            train_rows.push(TrainRow { features: build_features(&state, &scale), exit_label: row.exited });
            side.push((row.user_id.clone(), row.stall_s, survived_band, exited_before, stall_events));
            if !row.exited && row.stall_s >= 2.5 { survived_band = true; }
        }
        if row.exited {
            state.observe_exit(row.stall_s > 0.0);
            if row.stall_s > 0.0 { exited_before = true; }
        }
    }
    let cfg = TrainConfig { epochs: 36, learning_rate: 0.1, seed: 1, ..TrainConfig::default() };
    let report = train(&train_rows, &cfg).unwrap();
    println!("metrics {:?}", report.metrics);

    // evaluate on everything, breakdown of FPs
    let mut cache = ForwardCache::new();
    let mut fp_small = 0; let mut fp_band_unrevealed = 0; let mut fp_band_revealed = 0; let mut fp_large = 0;
    let mut fp_early = 0; let mut fps = 0; let mut tps = 0;
    for (row, (user, stall, survived, exited_b, nth)) in train_rows.iter().zip(&side) {
        let p = report.net.forward(&row.features, &mut cache)[EXIT_CLASS];
        let pred = p >= 0.5;
        if pred && !row.exit_label {
            fps += 1;
            if *stall < 2.5 { fp_small += 1; }
            else if *stall < 4.0 { if *survived { fp_band_revealed += 1; } else { fp_band_unrevealed += 1; } }
            else { fp_large += 1; }
            if *nth <= 8 { fp_early += 1; }
            let _ = (user, exited_b);
        }
        if pred && row.exit_label { tps += 1; }
    }
    println!("FPs {fps} (TP {tps}): small {fp_small}, band-unrevealed {fp_band_unrevealed}, band-revealed {fp_band_revealed}, large {fp_large}, within-first-8-stalls {fp_early}");
}
