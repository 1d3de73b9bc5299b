use std::collections::{HashMap, HashSet};

use crate::tensor::{with_grad_mode, Ctx, Tensor};

/// Gradients of the scalar `output` with respect to each tensor in `inputs`.
///
/// With `create_graph` the returned gradients are themselves part of a graph
/// and can be differentiated again. Inputs that `output` does not depend on
/// get a zero gradient.
pub fn grad(output: &Tensor, inputs: &[Tensor], create_graph: bool) -> Vec<Tensor> {
    assert_eq!(
        output.numel(),
        1,
        "grad() needs a scalar output, got shape {:?}",
        output.shape()
    );
    let seed = Tensor::ones(output.shape());
    grad_with_seed(output, &seed, inputs, create_graph)
}

/// Vector-Jacobian product: backpropagates `seed` (shaped like `output`).
pub fn grad_with_seed(
    output: &Tensor,
    seed: &Tensor,
    inputs: &[Tensor],
    create_graph: bool,
) -> Vec<Tensor> {
    assert_eq!(output.shape(), seed.shape());
    with_grad_mode(create_graph, || backprop(output, seed, inputs))
}

fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        let children: Vec<Tensor> = t
            .inputs()
            .iter()
            .filter(|c| c.requires_grad() && !visited.contains(&c.id()))
            .cloned()
            .collect();
        stack.push((t, true));
        for c in children {
            stack.push((c, false));
        }
    }
    order
}

fn backprop(output: &Tensor, seed: &Tensor, inputs: &[Tensor]) -> Vec<Tensor> {
    let targets: HashSet<usize> = inputs.iter().map(Tensor::id).collect();
    let mut results: HashMap<usize, Tensor> = HashMap::new();
    if targets.contains(&output.id()) && !output.requires_grad() {
        results.insert(output.id(), seed.clone());
    }

    if output.requires_grad() {
        let order = topo_order(output);

        // Only nodes with a path down to a requested input are worth visiting.
        let mut reaches: HashMap<usize, bool> = HashMap::with_capacity(order.len());
        for t in &order {
            let r = targets.contains(&t.id())
                || t
                    .inputs()
                    .iter()
                    .any(|c| reaches.get(&c.id()).copied().unwrap_or(false));
            reaches.insert(t.id(), r);
        }

        let mut grads: HashMap<usize, Tensor> = HashMap::new();
        grads.insert(output.id(), seed.clone());
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            if targets.contains(&t.id()) {
                results.insert(t.id(), g.clone());
            }
            let Some(gf) = &t.0.grad_fn else {
                continue;
            };
            let needs: Vec<bool> = gf
                .inputs
                .iter()
                .map(|c| c.requires_grad() && reaches.get(&c.id()).copied().unwrap_or(false))
                .collect();
            if !needs.iter().any(|&n| n) {
                continue;
            }
            let ctx = Ctx {
                inputs: &gf.inputs,
                output: t,
                needs: &needs,
            };
            let input_grads = (gf.backward)(&ctx, &g);
            debug_assert_eq!(input_grads.len(), gf.inputs.len(), "op {}", gf.name);
            for ((inp, need), ig) in gf.inputs.iter().zip(&needs).zip(input_grads) {
                if !*need {
                    continue;
                }
                let Some(ig) = ig else { continue };
                debug_assert_eq!(
                    ig.shape(),
                    inp.shape(),
                    "gradient shape mismatch in backward of {}",
                    gf.name
                );
                let acc = match grads.remove(&inp.id()) {
                    Some(prev) => prev.add(&ig),
                    None => ig,
                };
                grads.insert(inp.id(), acc);
            }
        }
    }

    inputs
        .iter()
        .map(|i| {
            results
                .get(&i.id())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(i.shape()))
        })
        .collect()
}
