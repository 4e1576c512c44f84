//! On-disk formats: the WSI1 model container and the WAV clip reader.

pub mod model_file;
pub mod wav;

pub use model_file::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use wav::{load_clip, parse_wav_bytes, pcm16_stereo_bytes, write_pcm16_stereo};
