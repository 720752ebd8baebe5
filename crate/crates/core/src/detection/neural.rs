//! YOLO-style network backend.
//!
//! The network itself sits behind [`InferenceBackend`]; this module owns
//! everything around it: letterbox preprocessing, decoding of the raw output
//! tensor, score filtering, per-class non-maximum suppression and mapping
//! boxes back to frame coordinates.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::GrayImage;

use super::{BoundingBox, Detection, Detector};
use crate::{Error, Result};

/// Dense `f32` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidInput(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

/// Something that runs the network: `1x3xHxW` in, raw predictions out.
pub trait InferenceBackend: Send {
    /// Network input (width, height).
    fn input_size(&self) -> (usize, usize);

    fn infer(&mut self, input: &Tensor) -> Result<Tensor>;
}

/// How raw predictions are laid out in the output tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputLayout {
    /// `[1, N, 5 + classes]`: cx, cy, w, h, objectness, class scores.
    YoloV5,
    /// `[1, 4 + classes, N]`: cx, cy, w, h, class scores (no objectness).
    #[default]
    YoloV8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralConfig {
    pub labels: Vec<String>,
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub layout: OutputLayout,
}

impl NeuralConfig {
    pub fn new(labels: Vec<String>) -> Self {
        Self {
            labels,
            score_threshold: 0.5,
            iou_threshold: 0.45,
            layout: OutputLayout::default(),
        }
    }
}

/// Reads a class list, one name per line; blank lines are skipped.
pub fn load_labels(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::BackendLoadFailure(format!("{}: {e}", path.display())))?;
    let labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if labels.is_empty() {
        return Err(Error::BackendLoadFailure(format!("{}: no class names", path.display())));
    }
    Ok(labels)
}

/// Scale and padding applied by [`letterbox`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
}

impl Letterbox {
    fn to_frame(self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.pad_x) / self.scale, (y - self.pad_y) / self.scale)
    }
}

/// Aspect-preserving resize into the network input, grey padding, grey
/// replicated into three channels, values scaled to `[0, 1]`.
pub fn letterbox(frame: &GrayImage, input: (usize, usize)) -> (Tensor, Letterbox) {
    let (fw, fh) = (frame.width() as f64, frame.height() as f64);
    let (iw, ih) = input;
    let scale = (iw as f64 / fw).min(ih as f64 / fh);
    let nw = ((fw * scale).round() as u32).clamp(1, iw as u32);
    let nh = ((fh * scale).round() as u32).clamp(1, ih as u32);
    let resized = imageops::resize(frame, nw, nh, FilterType::Triangle);
    let pad_x = ((iw as u32 - nw) / 2) as usize;
    let pad_y = ((ih as u32 - nh) / 2) as usize;

    let plane = iw * ih;
    let mut data = vec![114.0 / 255.0; 3 * plane];
    for (x, y, p) in resized.enumerate_pixels() {
        let v = p[0] as f32 / 255.0;
        let i = (y as usize + pad_y) * iw + x as usize + pad_x;
        data[i] = v;
        data[plane + i] = v;
        data[2 * plane + i] = v;
    }
    (
        Tensor {
            shape: vec![1, 3, ih, iw],
            data,
        },
        Letterbox {
            scale,
            pad_x: pad_x as f64,
            pad_y: pad_y as f64,
        },
    )
}

/// Greedy per-class suppression; keeps the higher-scoring box of any pair
/// whose IoU exceeds `iou_threshold`. Input order is irrelevant.
pub fn non_max_suppression(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
            .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        let suppressed = kept
            .iter()
            .any(|k| k.label == d.label && k.bbox.iou(&d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

fn decode(out: &Tensor, cfg: &NeuralConfig, lb: &Letterbox, frame: (usize, usize)) -> Result<Vec<Detection>> {
    let nc = cfg.labels.len();
    let dims: Vec<usize> = out.shape.iter().copied().filter(|&d| d != 1).collect();
    let (n, stride_attr, stride_box, attrs) = match (cfg.layout, dims.as_slice()) {
        (OutputLayout::YoloV5, [n, a]) if *a == 5 + nc => (*n, 1, *a, *a),
        (OutputLayout::YoloV8, [a, n]) if *a == 4 + nc => (*n, *n, 1, *a),
        _ => {
            return Err(Error::InferenceFailure(format!(
                "output shape {:?} does not fit {:?} with {nc} classes",
                out.shape, cfg.layout
            )))
        }
    };
    let at = |b: usize, k: usize| out.data[b * stride_box + k * stride_attr] as f64;
    let class_offset = attrs - nc;

    let mut dets = Vec::new();
    for b in 0..n {
        let objectness = match cfg.layout {
            OutputLayout::YoloV5 => at(b, 4),
            OutputLayout::YoloV8 => 1.0,
        };
        let (cls, score) =
            (0..nc)
                .map(|c| (c, at(b, class_offset + c) * objectness))
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if !(score >= cfg.score_threshold) {
            continue;
        }
        let (cx, cy, w, h) = (at(b, 0), at(b, 1), at(b, 2), at(b, 3));
        let (x0, y0) = lb.to_frame(cx - w / 2.0, cy - h / 2.0);
        let (x1, y1) = lb.to_frame(cx + w / 2.0, cy + h / 2.0);
        let Some(bbox) = BoundingBox::new(x0, y0, x1, y1)
            .ok()
            .and_then(|bb| bb.clamped(frame.0, frame.1))
        else {
            continue;
        };
        dets.push(Detection::new(cfg.labels[cls].clone(), score, bbox));
    }
    Ok(non_max_suppression(dets, cfg.iou_threshold))
}

pub struct NeuralDetector<B: InferenceBackend> {
    backend: B,
    config: NeuralConfig,
}

impl<B: InferenceBackend> NeuralDetector<B> {
    pub fn new(backend: B, config: NeuralConfig) -> Result<Self> {
        if config.labels.is_empty() {
            return Err(Error::BackendLoadFailure("empty class list".into()));
        }
        Ok(Self { backend, config })
    }
}

impl<B: InferenceBackend> Detector for NeuralDetector<B> {
    fn name(&self) -> &str {
        "neural"
    }

    fn run(&mut self, frame: &GrayImage) -> Result<Vec<Detection>> {
        let (input, lb) = letterbox(frame, self.backend.input_size());
        let out = self.backend.infer(&input)?;
        decode(
            &out,
            &self.config,
            &lb,
            (frame.width() as usize, frame.height() as usize),
        )
    }
}

#[cfg(feature = "onnx")]
mod onnx {
    use std::path::Path;

    use tract_onnx::prelude::*;

    use super::{InferenceBackend, Tensor};
    use crate::{Error, Result};

    type Plan = SimplePlan<TypedFact, Box<dyn TypedOp>, Graph<TypedFact, Box<dyn TypedOp>>>;

    /// ONNX model executed with tract.
    pub struct OnnxBackend {
        plan: Plan,
        input: (usize, usize),
    }

    impl OnnxBackend {
        pub fn load(path: &Path, input: (usize, usize)) -> Result<Self> {
            let fail = |e: TractError| Error::BackendLoadFailure(format!("{}: {e}", path.display()));
            let plan = tract_onnx::onnx()
                .model_for_path(path)
                .map_err(fail)?
                .with_input_fact(0, f32::fact([1, 3, input.1, input.0]).into())
                .map_err(fail)?
                .into_optimized()
                .map_err(fail)?
                .into_runnable()
                .map_err(fail)?;
            Ok(Self { plan, input })
        }
    }

    impl InferenceBackend for OnnxBackend {
        fn input_size(&self) -> (usize, usize) {
            self.input
        }

        fn infer(&mut self, input: &Tensor) -> Result<Tensor> {
            let fail = |e: TractError| Error::InferenceFailure(e.to_string());
            let t = tract_ndarray::ArrayD::from_shape_vec(input.shape.clone(), input.data.clone())
                .map_err(|e| Error::InferenceFailure(e.to_string()))?;
            let out = self.plan.run(tvec!(t.into_tensor().into())).map_err(fail)?;
            let view = out[0].to_array_view::<f32>().map_err(fail)?;
            Tensor::new(view.shape().to_vec(), view.iter().copied().collect())
        }
    }
}

#[cfg(feature = "onnx")]
pub use onnx::OnnxBackend;

#[cfg(test)]
mod tests {
    use super::*;

    /// Returns a canned output tensor and records the input it was given.
    struct Canned {
        input: (usize, usize),
        output: Tensor,
        seen: Option<Vec<usize>>,
    }

    impl InferenceBackend for Canned {
        fn input_size(&self) -> (usize, usize) {
            self.input
        }

        fn infer(&mut self, input: &Tensor) -> Result<Tensor> {
            self.seen = Some(input.shape.clone());
            Ok(self.output.clone())
        }
    }

    fn labels() -> Vec<String> {
        ["car", "motorbike", "bus"].map(String::from).to_vec()
    }

    /// YOLOv8 layout: attribute-major `[1, 4 + nc, N]`.
    fn v8_output(boxes: &[[f32; 7]]) -> Tensor {
        let n = boxes.len();
        let mut data = vec![0.0; 7 * n];
        for (b, row) in boxes.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                data[k * n + b] = *v;
            }
        }
        Tensor::new(vec![1, 7, n], data).unwrap()
    }

    #[test]
    fn letterbox_geometry() {
        let frame = GrayImage::from_pixel(640, 480, image::Luma([255]));
        let (t, lb) = letterbox(&frame, (320, 320));
        assert_eq!(t.shape, vec![1, 3, 320, 320]);
        assert_eq!(lb.scale, 0.5);
        assert_eq!((lb.pad_x, lb.pad_y), (0.0, 40.0));
        // Padding row is grey, image rows are white.
        assert!((t.data[0] - 114.0 / 255.0).abs() < 1e-6);
        assert_eq!(t.data[50 * 320 + 10], 1.0);
    }

    #[test]
    fn decodes_and_suppresses() {
        // Network space 320x320 over a 640x480 frame: scale 0.5, pad_y 40.
        let output = v8_output(&[
            [100.0, 140.0, 40.0, 20.0, 0.9, 0.05, 0.0],
            [102.0, 141.0, 40.0, 20.0, 0.7, 0.0, 0.0], // overlaps the first car
            [250.0, 200.0, 30.0, 30.0, 0.1, 0.8, 0.0], // motorbike
            [50.0, 60.0, 10.0, 10.0, 0.2, 0.3, 0.4],   // below threshold
        ]);
        let backend = Canned {
            input: (320, 320),
            output,
            seen: None,
        };
        let mut det = NeuralDetector::new(backend, NeuralConfig::new(labels())).unwrap();
        let frame = GrayImage::new(640, 480);
        let out = crate::detection::detect(&frame, &mut det).unwrap();
        assert_eq!(det.backend.seen.as_deref(), Some(&[1, 3, 320, 320][..]));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].label, "car");
        assert!((out[0].confidence - 0.9).abs() < 1e-6);
        let b = out[0].bbox;
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (160.0, 180.0, 240.0, 220.0));
        assert_eq!(out[0].center.x, 200.0);
        assert_eq!(out[1].label, "motorbike");
    }

    #[test]
    fn yolov5_layout_uses_objectness() {
        let data = vec![
            100.0, 100.0, 20.0, 20.0, 0.5, 0.9, 0.1, 0.0, // 0.45 after objectness
            200.0, 100.0, 20.0, 20.0, 1.0, 0.1, 0.6, 0.0,
        ];
        let output = Tensor::new(vec![1, 2, 8], data).unwrap();
        let mut cfg = NeuralConfig::new(labels());
        cfg.layout = OutputLayout::YoloV5;
        let mut det = NeuralDetector::new(
            Canned {
                input: (320, 320),
                output,
                seen: None,
            },
            cfg,
        )
        .unwrap();
        let out = det.run(&GrayImage::new(320, 320)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].label, "motorbike");
    }

    #[test]
    fn wrong_output_shape_is_inference_failure() {
        let output = Tensor::new(vec![1, 9, 2], vec![0.0; 18]).unwrap();
        let mut det = NeuralDetector::new(
            Canned {
                input: (64, 64),
                output,
                seen: None,
            },
            NeuralConfig::new(labels()),
        )
        .unwrap();
        assert!(matches!(
            det.run(&GrayImage::new(64, 64)),
            Err(Error::InferenceFailure(_))
        ));
    }

    #[test]
    fn nms_keeps_other_classes() {
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let out = non_max_suppression(
            vec![
                Detection::new("car", 0.6, b),
                Detection::new("bus", 0.5, b),
                Detection::new("car", 0.9, b),
            ],
            0.45,
        );
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].label.as_str(), out[0].confidence), ("car", 0.9));
    }

    #[test]
    fn label_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("coco.names");
        std::fs::write(&p, "car\n\nmotorbike\n  bus  \n").unwrap();
        assert_eq!(load_labels(&p).unwrap(), labels());
        std::fs::write(&p, "\n").unwrap();
        assert!(matches!(load_labels(&p), Err(Error::BackendLoadFailure(_))));
        assert!(load_labels(&dir.path().join("missing")).is_err());
    }
}
