"""
navmem: group-granular KV-cache memory for navigation planners

Subpackages
-----------

  navmap      --- objects, groups and their text rendering
  attention   --- seeded miniature decoder, per-group KV blocks, discrete attention
  kvstore     --- budgeted device tier over a file-backed tier
  clustering  --- attention- and position-based grouping of new objects
  retrieval   --- embedding providers, group probabilities, knapsack selection
  planner     --- sub-goal decisions and the answer template
  simworld    --- synthetic themed scenes, detection, motion, episode loop
  costmodel   --- modeled planning and end-to-end latency
"""

postpone_import = 1
