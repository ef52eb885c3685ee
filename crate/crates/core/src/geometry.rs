use crate::domain::BBox;
use crate::error::{Error, Result};

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    a.intersection(b).map_or(0.0, |i| i.area())
}

/// Intersection over union. Zero when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Smallest axis-aligned box enclosing both inputs.
pub fn enclosing(a: &BBox, b: &BBox) -> BBox {
    BBox::from_corners(
        a.x.min(b.x),
        a.y.min(b.y),
        a.right().max(b.right()),
        a.bottom().max(b.bottom()),
    )
}

/// Generalized IoU: `iou - (enclosing - union) / enclosing`, in `[-1, 1]`.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.area() <= 0.0 && b.area() <= 0.0 {
        return Err(Error::DegenerateInput(format!(
            "giou of two zero-area boxes {a:?} and {b:?}"
        )));
    }
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let hull = enclosing(a, b).area();
    Ok(inter / union - (hull - union) / hull)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        // overlap 1x1, union 4 + 4 - 1
        let v = iou(&BBox::new(0.0, 0.0, 2.0, 2.0), &BBox::new(1.0, 1.0, 2.0, 2.0));
        assert!((v - 1.0 / 7.0).abs() < EPS);
        assert_eq!(iou(&BBox::new(0.0, 0.0, 1.0, 1.0), &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn iou_degenerate_is_zero() {
        let z = BBox::new(3.0, 3.0, 0.0, 0.0);
        assert_eq!(iou(&z, &z), 0.0);
        assert_eq!(iou(&z, &BBox::new(0.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn giou_examples() {
        let a = BBox::new(2.0, 3.0, 4.0, 5.0);
        assert_eq!(giou(&a, &a).unwrap(), 1.0);
        let v = giou(&BBox::new(0.0, 0.0, 1.0, 1.0), &BBox::new(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((v + 0.5).abs() < EPS);
        let v = giou(&BBox::new(0.0, 0.0, 1.0, 1.0), &BBox::new(99.0, 99.0, 1.0, 1.0)).unwrap();
        assert!((v + 0.9998).abs() < EPS);
    }

    #[test]
    fn giou_rejects_two_degenerate_boxes() {
        let z = BBox::new(0.0, 0.0, 0.0, 5.0);
        assert!(matches!(giou(&z, &z), Err(Error::DegenerateInput(_))));
        assert!(giou(&z, &BBox::new(0.0, 0.0, 1.0, 1.0)).is_ok());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let (i1, i2) = (iou(&a, &b), iou(&b, &a));
            prop_assert!((i1 - i2).abs() < EPS);
            prop_assert!((0.0..=1.0).contains(&i1));
            let (g1, g2) = (giou(&a, &b).unwrap(), giou(&b, &a).unwrap());
            prop_assert!((g1 - g2).abs() < EPS);
            prop_assert!((-1.0..=1.0).contains(&g1));
            prop_assert!(g1 <= i1 + EPS);
        }

        #[test]
        fn self_overlap_is_one(a in arb_box()) {
            prop_assert!((iou(&a, &a) - 1.0).abs() < EPS);
            prop_assert!((giou(&a, &a).unwrap() - 1.0).abs() < EPS);
        }

        #[test]
        fn nested_boxes_have_equal_iou_and_giou(a in arb_box(), fx in 0.0..1.0f64, fy in 0.0..1.0f64, s in 0.1..1.0f64) {
            // an inner box fills its own enclosure with the outer one, so the slack term vanishes
            let inner = BBox::new(a.x + fx * a.w * (1.0 - s), a.y + fy * a.h * (1.0 - s), a.w * s, a.h * s);
            prop_assert!((giou(&a, &inner).unwrap() - iou(&a, &inner)).abs() < 1e-9);
        }
    }
}
