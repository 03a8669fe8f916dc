//! Prints the layer-by-layer shapes and parameter counts of both models,
//! with the compression ratio of their latent codes.

use erpenet::eval::compression_ratio;
use erpenet::model::Network;
use erpenet::signal::{EPOCH_STEPS, GRID_CHANNELS, TARGET_RATE};

fn main() -> erpenet::Result<()> {
    for net in [Network::<f32>::erpenet(0)?, Network::<f32>::sslc_ae(0)?] {
        let arch = net.architecture();
        println!("{} ({} parameters, fingerprint {})", arch.name(), net.count_params(), arch.fingerprint());
        for row in net.shape_trace()? {
            println!("  {:<36} {:?}", row.layer, row.shape);
        }
        let window = EPOCH_STEPS as f64 / TARGET_RATE;
        let ratio = compression_ratio(window, TARGET_RATE, GRID_CHANNELS, net.latent_dim())?;
        println!("  latent {} values, compression {ratio:.2}x\n", net.latent_dim());
    }
    Ok(())
}
