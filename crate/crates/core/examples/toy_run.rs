//! Trains one toy configuration and prints its normalized W2.
//!
//! `cargo run --release --example toy_run -- mog2d so2 [steps=N] [loss=cfm] [act=tanh] [rule=exp] [seed=S]`

use lie_diffuse::data::DatasetName;
use lie_diffuse::model::{Activation, LossKind};
use lie_diffuse::pipeline::{run_toy, ToySetup};
use lie_diffuse::sde::StepRule;
use lie_diffuse::GroupId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let dataset: DatasetName = args.get(1).map(String::as_str).unwrap_or("mog2d").parse()?;
    let group: GroupId = args.get(2).map(String::as_str).unwrap_or("so2").parse()?;
    let mut setup = ToySetup::new(dataset, group, 0);
    for arg in args.iter().skip(3) {
        let (key, value) = arg.split_once('=').ok_or("options are key=value")?;
        match (key, value) {
            ("steps", v) => setup.train.steps = v.parse()?,
            ("seed", v) => {
                let seed: u64 = v.parse()?;
                setup = ToySetup { seed, train: lie_diffuse::model::TrainConfig { seed, ..setup.train }, ..setup };
            }
            ("loss", "cfm") => setup.train.loss_kind = LossKind::FlowMatching,
            ("loss", "score") => setup.train.loss_kind = LossKind::ScoreMatching,
            ("act", "tanh") => setup.activation = Activation::Tanh,
            ("act", "silu") => setup.activation = Activation::Silu,
            ("rule", "exp") => setup.step_rule = StepRule::Exponential,
            ("rule", "euler") => setup.step_rule = StepRule::Euler,
            _ => return Err(format!("unknown option {arg}").into()),
        }
    }
    let out = run_toy(&setup)?;
    println!(
        "{} {} {:?} {:?} loss {:.4}->{:.4} normalized_w2 {:.3} raw {:.3} dropped {} train {:.1}s",
        dataset.as_str(),
        setup.group,
        setup.activation,
        setup.step_rule,
        out.report.head_mean(500),
        out.report.tail_mean(500),
        out.w2.normalized_w2,
        out.w2.raw_w2,
        out.dropped,
        out.report.wall_time_s
    );
    Ok(())
}
