//! YOLO-format datasets: label parsing, PPM images, stretch resizing, grid
//! target encoding, batching and the synthetic shapes generator.

mod dataset;
mod image;
mod labels;
mod synth;
mod targets;

pub use dataset::{batch_iter, epoch_order, load_dataset, make_batch, Batch, Dataset, Sample};
pub use image::{class_color, decode_ppm, draw_boxes, encode_ppm, is_supported_image, read_image, resize_image, resize_rgb, write_ppm, RgbImage};
pub use labels::{format_labels, parse_label_line, parse_labels, read_class_names, read_labels, Annotation};
pub use synth::{render_sample, synth_shapes, SynthConfig, GLYPH_NAMES};
pub use targets::{cell_of, encode_targets, targets_as_raw, EncodedTargets};
