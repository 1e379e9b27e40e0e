from xai_downscale.run import Run
from xai_downscale import container as C

run = Run('./tests/files/run_synth.yml', overrides={'output_dir': '/tmp/xai_downscale_sample'})

# Build the synthetic dataset, fit a model and explain it

for command in ('synth', 'train', 'downscale', 'evaluate', 'explain'):
    run.execute(command)

for line in run.logs:
    print(line)

# Saliency mass per predictor channel, summed over the test days

asm = C.load_asm('/tmp/xai_downscale_sample/asm.xds')
for channel, values in zip(asm.channels, asm.values):
    print('{}\t{:.3f}'.format(channel, values.sum()))
