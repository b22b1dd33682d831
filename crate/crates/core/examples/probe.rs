use greenwave::control::{max_pressure_next, pressure};
use greenwave::env::EpisodeConfig;
use greenwave::net::{build_grid, PHASES};
use greenwave::rl::{generate_expert_dataset, greedy_accuracy, grpo_train, TrainConfig};
use greenwave::sim::{FlowSpec, MovementCounts, Observation};
use greenwave::agent::ParametricPolicy;

fn main() {
    let net = build_grid(4, 4, 300.0).unwrap();
    for (rate, horizon) in [(5000.0, 600u32), (8000.0, 900), (10000.0, 900)] {
        let flow = FlowSpec { total_rate_vph: rate, seed: 11, ..FlowSpec::default() };
        let episode = EpisodeConfig { horizon_s: horizon, ..EpisodeConfig::default() };
        let oracle = |obs: &Observation| max_pressure_next(obs, &MovementCounts::default());
        let dataset = generate_expert_dataset(&net, &flow, oracle, 500, &episode);
        let down = MovementCounts::default();
        let mut margins: Vec<i64> = dataset.iter().map(|s| {
            let mut ps: Vec<i64> = PHASES.iter().map(|&p| pressure(&s.observation, p, &down)).collect();
            ps.sort_unstable_by(|a, b| b.cmp(a));
            ps[0] - ps[1]
        }).collect();
        margins.sort_unstable();
        let frac_le = |m: i64| margins.iter().filter(|&&x| x <= m).count() as f64 / margins.len() as f64;
        println!("rate {rate} h {horizon}: margin<=0 {:.2} <=1 {:.2} <=2 {:.2} median {}",
            frac_le(0), frac_le(1), frac_le(2), margins[margins.len()/2]);

        // Ideal hand-built weights: +1 on early+seg1 of own lanes.
        let mut ideal = ParametricPolicy::new(3);
        {
            let dim = ideal.feature_dim();
            // layout: phase-major, approach-major, (1+3 segs)*2 values
            for (pi, phase) in PHASES.iter().enumerate() {
                for (ai, approach) in greenwave::net::APPROACHES.iter().enumerate() {
                    if phase.movements().iter().any(|&(a, _)| a == *approach) {
                        let base = (pi * 4 + ai) * 8;
                        ideal.weights_mut()[pi * dim + base] = 1.0;     // early raw
                        ideal.weights_mut()[pi * dim + base + 2] = 1.0; // seg1 raw
                    }
                }
            }
        }
        let features: Vec<Vec<f64>> = dataset.iter().map(|s| greenwave::agent::featurize(&s.observation, &greenwave::agent::summarize_inbox(&[], &[]))).collect();
        let labels: Vec<_> = dataset.iter().map(|s| s.expert_action).collect();
        println!("  ideal-weight accuracy: {:.3}", greedy_accuracy(&ideal, &features, &labels));

        let mut policy = ParametricPolicy::new(3);
        let hist = grpo_train(&dataset, &mut policy, &TrainConfig { iterations: 600, ..TrainConfig::default() }).unwrap();
        println!("  grpo acc@100 {:.3} @200 {:.3} @400 {:.3} @600 {:.3}",
            hist[99].accuracy.unwrap(), hist[199].accuracy.unwrap(), hist[399].accuracy.unwrap(), hist[599].accuracy.unwrap());
    }
}
