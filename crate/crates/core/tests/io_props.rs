use mssfc::io::checkpoint::{decode_checkpoint, encode_checkpoint};
use mssfc::io::netpbm::{decode_pgm, decode_pgm_mask, decode_ppm, encode_pgm, encode_pgm_mask, encode_ppm};
use mssfc::{ParamStore, Shape, Tensor};
use proptest::prelude::*;

fn raster(c: usize) -> impl Strategy<Value = (usize, usize, Vec<u8>)> {
    (1usize..20, 1usize..20).prop_flat_map(move |(h, w)| {
        (Just(h), Just(w), proptest::collection::vec(any::<u8>(), c * h * w))
    })
}

proptest! {
    #[test]
    fn ppm_roundtrips((h, w, bytes) in raster(3)) {
        let img = Tensor::<f32>::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| {
            f32::from(bytes[(y * w + x) * 3 + c]) / 255.0
        });
        let enc = encode_ppm(&img).unwrap();
        prop_assert_eq!(&enc[enc.len() - bytes.len()..], &bytes[..]);
        let back = decode_ppm::<f32>(&enc).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(encode_ppm(&back).unwrap(), enc);
    }

    #[test]
    fn pgm_and_mask_roundtrip((h, w, bytes) in raster(1)) {
        let grey = Tensor::<f64>::from_fn(Shape::new(1, 1, h, w), |[_, _, y, x]| {
            f64::from(bytes[y * w + x]) / 255.0
        });
        let enc = encode_pgm(&grey).unwrap();
        prop_assert_eq!(&decode_pgm::<f64>(&enc).unwrap(), &grey);
        let mask = grey.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        let enc = encode_pgm_mask(&mask).unwrap();
        prop_assert_eq!(decode_pgm_mask::<f64>(&enc).unwrap(), mask);
    }

    #[test]
    fn checkpoint_roundtrips_bits(
        values in proptest::collection::vec(
            any::<f32>().prop_filter("finite", |v| v.is_finite()),
            1..64,
        ),
    ) {
        let mut store = ParamStore::<f32>::new();
        let n = values.len();
        store.add("w", Tensor::from_vec(Shape::new(1, 1, 1, n), values).unwrap()).unwrap();
        let bytes = encode_checkpoint(&store, None).unwrap();
        let back = decode_checkpoint::<f32>(&bytes).unwrap();
        let a: Vec<u32> = store.by_name("w").unwrap().value.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.params.by_name("w").unwrap().value.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert!(back.optimizer.is_none());
    }

    #[test]
    fn decoders_reject_garbage_without_panicking(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_ppm::<f32>(&bytes);
        let _ = decode_pgm::<f32>(&bytes);
        let _ = decode_pgm_mask::<f32>(&bytes);
        let _ = decode_checkpoint::<f32>(&bytes);
    }
}
