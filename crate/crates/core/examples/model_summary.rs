//! Parameter counts per component and output grid shapes for each preset,
//! before and after stripping the auxiliary branch.

use std::collections::BTreeMap;

use gridsight::autodiff::{Graph, Module, Tensor};
use gridsight::model::{Mode, Model, ModelConfig};

fn main() -> gridsight::Result<()> {
    for cfg in [ModelConfig::tiny(), ModelConfig::preset_c(), ModelConfig::preset_e()] {
        let mut model = Model::<f32>::new(cfg.clone())?;
        let mut groups: BTreeMap<String, usize> = BTreeMap::new();
        model.visit(&mut |p| {
            if p.trainable {
                let group = p.name.split('.').take(if p.name.starts_with("aux.") { 2 } else { 1 }).collect::<Vec<_>>().join(".");
                *groups.entry(group).or_default() += p.numel();
            }
        });
        println!("preset {} ({}px, strides {:?})", cfg.name, cfg.input_size, cfg.strides);
        for (g, n) in &groups {
            println!("  {g:<10} {n:>8}");
        }
        let stripped = model.strip_auxiliary();
        println!("  training {:>8}  inference {:>8}", model.param_count(), stripped.param_count());

        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 3, cfg.input_size, cfg.input_size]), false);
        let preds = model.forward(&mut g, x, Mode::Infer)?;
        let shapes: Vec<String> = preds.main.iter().map(|&v| format!("{:?}", g.shape(v))).collect();
        println!("  outputs  {}\n", shapes.join(" "));
    }
    Ok(())
}
