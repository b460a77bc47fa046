//! Fixtures shared by the kernel benchmarks.

use spinbed_core::models::{AcModel, AcModelConfig, LikelihoodModel, NuclearModel, NuclearModelConfig};
use spinbed_core::{ControlGrid, ParticleCloud};

pub const N_P: usize = 3200;

pub struct Fixture<M> {
    pub model: M,
    pub cloud: ParticleCloud,
    pub grid: ControlGrid,
}

/// Two-spin nuclear model, prior cloud and the 901-point control grid.
pub fn nuclear(n_spins: usize, n_p: usize) -> Fixture<NuclearModel> {
    let model = NuclearModel::new(NuclearModelConfig::with_spins(n_spins)).expect("default config is valid");
    let cloud = model.prior_cloud(n_p, 1).expect("prior");
    let grid = ControlGrid::uniform(1.0, 10.0, 0.01).expect("grid");
    Fixture { model, cloud, grid }
}

/// Field model, prior cloud and the 650-point control grid.
pub fn ac(n_p: usize) -> Fixture<AcModel> {
    let model = AcModel::new(AcModelConfig::default()).expect("default config is valid");
    let cloud = model.prior_cloud(n_p, 1).expect("prior");
    let grid = ControlGrid::uniform(0.51, 7.0, 0.01).expect("grid");
    Fixture { model, cloud, grid }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_sizes() {
        let f = nuclear(2, 10);
        assert_eq!((f.cloud.len(), f.grid.len()), (10, 901));
        assert_eq!(ac(10).grid.len(), 650);
    }
}
