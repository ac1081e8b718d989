//! Differentiable building blocks shared by the neural models.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tape;

pub use gradcheck::gradient_check;
pub use layers::{
    average_level_embedding, dot_attention, encode_sequence, BiLstm, Dropout, Embedding,
    EncodedSequence, Linear, NeuralError, SequenceEncoder, SequenceEncoding,
};
pub use optim::Adam;
pub use tape::{Gradients, Graph, Mat, ParamId, ParamStore, Var};
