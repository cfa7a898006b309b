//! Random-graph shortest-path MDPs: generate, serialize, reload and solve.

use sa_momentum::mdp::{bellman_error, q_value_iteration, random_graph_mdp, Mdp};

fn main() -> sa_momentum::Result<()> {
    let mdp = random_graph_mdp(10, 0.25, 0.8, 3, 0.8)?;
    let text = mdp.to_text()?;
    print!("{text}");
    let back = Mdp::from_text(&text)?;
    assert_eq!(back.to_text()?, text);

    let q = q_value_iteration(&mdp, 1e-10)?;
    println!("d = {} state-action pairs, Bellman residual {:.2e}", mdp.d(), bellman_error(&mdp, &q));
    for x in 0..mdp.n_states() {
        let u = mdp.greedy(&q, x);
        let p = mdp.pair(u);
        let target = p.next.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        println!("node {x}: head for {target}, expected cost-to-go {:.3}", q[u]);
    }
    Ok(())
}
