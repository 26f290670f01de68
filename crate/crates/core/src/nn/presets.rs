//! The three fixed architectures used throughout: an LSTM predictor on raw
//! weekly features, an LSTM autoencoder, and a CNN predictor on embeddings.

use super::layer::LayerSpec;

pub const LEAK: f64 = 0.2;

/// Conv1D(16,1)-ReLU-Conv1D(8,1)-ReLU-LSTM(8)-ReLU-Flatten-Dense(1)-Sigmoid.
pub fn lstm_predictor() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv1d(16, 1),
        LayerSpec::Relu,
        LayerSpec::conv1d(8, 1),
        LayerSpec::Relu,
        LayerSpec::lstm(8),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::dense(1),
        LayerSpec::Sigmoid,
    ]
}

/// Encoder half of the LSTM autoencoder; emits a flat `time * bottleneck`
/// embedding.
pub fn lstm_encoder(bottleneck: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv1d(12, 1),
        LayerSpec::leaky_relu(LEAK),
        LayerSpec::bilstm(8),
        LayerSpec::leaky_relu(LEAK),
        LayerSpec::conv1d(bottleneck, 1),
        LayerSpec::Flatten,
    ]
}

/// Decoder half; reconstructs `channels` event types per step in `[0, 1]`.
pub fn lstm_decoder(time: usize, bottleneck: usize, channels: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::reshape(vec![time, bottleneck]),
        LayerSpec::bilstm(6),
        LayerSpec::leaky_relu(LEAK),
        LayerSpec::conv1d(channels, 1),
        LayerSpec::Sigmoid,
    ]
}

/// Conv1D(8,3)-ReLU-Conv1D(8,3)-ReLU-Flatten-Dense(1)-Sigmoid.
pub fn cnn_predictor() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv1d(8, 3),
        LayerSpec::Relu,
        LayerSpec::conv1d(8, 3),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::dense(1),
        LayerSpec::Sigmoid,
    ]
}

/// Looks up a preset by name. `time` and `channels` describe the input.
pub fn by_name(name: &str, time: usize, channels: usize) -> Option<Vec<LayerSpec>> {
    match name {
        "lstm-predictor" => Some(lstm_predictor()),
        "cnn-embedding" => Some(cnn_predictor()),
        "lstm-ae" => {
            let mut specs = lstm_encoder(8);
            specs.extend(lstm_decoder(time, 8, channels));
            Some(specs)
        }
        _ => None,
    }
}
