// Generates a small scene, scores its queries and refines the reliable ones.

#include <iostream>

#include "hrapr/hrapr.hpp"

int main() {
  using namespace hrapr;

  SceneSpec spec;
  spec.dim = 128;
  spec.num_train = 400;
  spec.num_test_near = 50;
  spec.num_test_far = 50;
  const SynthScene scene = generate_scene(spec);

  const PoseFeatureDB db = scene.database(IndexOptions{1.5});
  const auto queries = scene.query_inputs();
  const GatingPolicy policy = GatingPolicy::outdoor();
  const ScoreBatchResult scored = score_batch(db, queries, policy, 1.5);
  std::cout << "reliable fraction " << io::format_fixed(reliable_fraction(scored.scored), 3) << "\n";

  std::vector<FeatureEmbedding> targets;
  for (const auto i : scored.input_index) targets.push_back(queries[i].embedding);
  const auto batch = scheduled_refine_batch(scored.scored, synthetic_refiner_factory(scene.field, targets), policy);

  std::vector<PoseError> before, after;
  for (const auto& rq : batch.refined) {
    const auto& q = scored.scored[rq.query_index];
    before.push_back(pose_error(q.predicted, *q.gt));
    after.push_back(pose_error(rq.trace.final_pose(), *q.gt));
  }
  const auto b = median_errors(before), a = median_errors(after);
  std::cout << "median translation error " << io::format_fixed(b.trans_m, 3) << " m -> "
            << io::format_fixed(a.trans_m, 3) << " m\n";
  std::cout << "average steps " << io::format_fixed(batch.avg_steps, 1) << " (uniform would be "
            << policy.ls_steps << ")\n";
  return 0;
}
