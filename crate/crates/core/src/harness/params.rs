//! Parameter-count table for a model configuration.

use std::fmt::Write as _;

use crate::attention::VariantKind;
use crate::error::Result;
use crate::models::{Model, ModelConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SlotRow {
    pub name: String,
    pub channels: usize,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamsTable {
    pub config: ModelConfig,
    pub total: usize,
    /// Total of the same architecture without attention.
    pub default_total: usize,
    pub slots: Vec<SlotRow>,
}

impl ParamsTable {
    pub fn build(config: ModelConfig) -> Result<Self> {
        let model = Model::<f32>::build(config, 0)?;
        let slots = model
            .attention_slots()
            .into_iter()
            .map(|(name, a)| SlotRow {
                name: name.to_string(),
                channels: a.spec.channels,
                params: a.param_count(),
            })
            .collect();
        let default_total = if config.variant == VariantKind::None {
            model.count_params()
        } else {
            let base = ModelConfig {
                variant: VariantKind::None,
                ..config
            };
            Model::<f32>::build(base, 0)?.count_params()
        };
        Ok(ParamsTable {
            config,
            total: model.count_params(),
            default_total,
            slots,
        })
    }

    pub fn delta(&self) -> usize {
        self.total - self.default_total
    }

    pub fn render(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "arch {}  variant {}  reduction {}  classes {}  input {}",
            c.arch,
            c.variant,
            c.reduction,
            c.num_classes,
            c.input_size.pixels()
        );
        let _ = writeln!(s, "{:<16} {:>8} {:>10}", "slot", "channels", "params");
        for r in &self.slots {
            let _ = writeln!(s, "{:<16} {:>8} {:>10}", r.name, r.channels, r.params);
        }
        let _ = writeln!(s, "total params      {}", self.total);
        let _ = writeln!(s, "default params    {}", self.default_total);
        let _ = writeln!(s, "delta vs default  {}", self.delta());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Arch;

    #[test]
    fn cnn3_bump_vs_se() {
        let se = ParamsTable::build(ModelConfig::new(Arch::Cnn3, VariantKind::Se)).unwrap();
        let bump = ParamsTable::build(ModelConfig::new(Arch::Cnn3, VariantKind::Bump)).unwrap();
        assert_eq!(bump.delta() - se.delta(), 4 * 4 + 4);
        assert_eq!(se.slots, vec![SlotRow { name: "attn".into(), channels: 64, params: 580 }]);
        let none = ParamsTable::build(ModelConfig::new(Arch::Cnn3, VariantKind::None)).unwrap();
        assert_eq!(none.delta(), 0);
        assert!(bump.render().contains("delta vs default  600"));
    }
}
