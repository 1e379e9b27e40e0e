"""
The Run object: one run-config plus the workflows the command line offers.
"""

from collections import OrderedDict
import datetime
import hashlib
import logging
import os

import numpy as np
import yaml

from xai_downscale import __version__
from xai_downscale.errors import InputError
from xai_downscale.evaluation import (
    DELTA_THRESHOLD_DEGC, ValidationIndex, bias_map, climatology, pseudo_reality_report,
    regional_deltas, rmse_map, spatial_mean_abs)
from xai_downscale.grid import GridGeometry, LandMask
from xai_downscale.models import ArchitectureConfig, build_model
from xai_downscale.period_match import PeriodMatch
from xai_downscale.preprocess import adjust_gcm_monthly, apply_standardizer, fit_standardizer, monthly_moments
from xai_downscale.regions import RegionSet
from xai_downscale.render import render_heatmap
from xai_downscale.saliency import DEFAULT_STEPS, accumulate_asm, compute_sdm, saliency_cubes
from xai_downscale.synth import SyntheticSpec, synth_generate, synth_pseudo_gcm
from xai_downscale.training import TrainConfig, train
import xai_downscale.container as C
import xai_downscale.helpers as H

log = logging.getLogger(__name__)

COMMANDS = ('synth', 'train', 'downscale', 'evaluate', 'explain', 'delta', 'render')
MANIFEST_NAME = 'run_manifest.yml'
PARTIAL_SUFFIX = '.partial'

OUTPUTS = {
    'predictors': 'predictors.xds',
    'predictand': 'predictand.xds',
    'truth': 'truth.xds',
    'gcm_predictors': 'gcm_predictors.xds',
    'gcm_predictand': 'gcm_predictand.xds',
    'checkpoint': 'checkpoint.xds',
    'standardizer': 'standardizer.xds',
    'train_log': 'train_log.tsv',
    'predictions': 'predictions.xds',
    'evaluation': 'evaluation.xds',
    'evaluation_table': 'evaluation.tsv',
    'cubes': 'saliency_cubes.xds',
    'asm': 'asm.xds',
    'sdm': 'sdm.xds',
    'delta_report': 'delta_report.xds',
    'delta_table': 'delta_report.tsv',
    'heatmap': 'heatmap.pgm',
}


def _to_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('true', 'yes', 'on', '1'):
        return True
    if text in ('false', 'no', 'off', '0'):
        return False
    raise ValueError(value)


def _file_digest(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


class Run(object):
    """
    A run object bundles a run-config with the artifacts one command
    writes into the output directory.

    .. code:: python

        from xai_downscale.run import Run

        run = Run('./tests/files/run_synth.yml')

        # Example of overriding a config item
        run = Run('./tests/files/run_synth.yml', overrides={'seed': 7})

        # Example of loading the run-config from a dictionary
        run = Run({'output_dir': '/tmp/xds', 'synth_days': 400}, load_file=False)

        # Example of extending the run object
        run.facts['experiment'] = 'locality'

        run.execute('synth')
        run.execute('train')

    :param config: run-config file name, or a dict when load_file is False
    :param load_file: default, True -> type bool
    :param overrides: dict of items replacing config items
    """

    def __init__(self, config, load_file=True, overrides=None):
        if load_file:
            data = self._load_from_file(config, parse_yaml=True)
            self.source = str(config)
        else:
            data = config
            self.source = None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise InputError('run-config must be a key-value mapping')
        self.config = dict(data)
        for key, value in (overrides or {}).items():
            if value is not None:
                self.config[key] = value
        self.facts = dict()
        self.artifacts = list()
        self._logs = list()
        self.command = None

    def __repr__(self):
        return 'Run(source={}, output_dir={})'.format(self.source, self.output_dir)

    @property
    def logs(self):
        return self._logs

    @property
    def config_hash(self):
        """ SHA-256 of the canonical YAML dump of the config """

        text = yaml.safe_dump(self.config, default_flow_style=False)
        return hashlib.sha256(text.encode('utf-8')).hexdigest()

    @property
    def output_dir(self):
        return self.get('output_dir', '.', str)

    @property
    def seed(self):
        return self.get('seed', 0, int)

    @staticmethod
    def _load_from_file(name, parse_yaml=False):
        """
        Opens a run-config file and loads it as a string.

        :param name: type str
        :param parse_yaml: type boolean
        :return: content -> type str or type dict
        """
        if not os.path.isfile(str(name)):
            raise InputError('run-config {} does not exist'.format(name))
        with open(name) as f:
            content = f.read()

        if parse_yaml:
            try:
                content = yaml.safe_load(content)
            except yaml.YAMLError as e:
                raise InputError('run-config {} is not valid key-value text: {}'.format(name, e))

        return content

    def get(self, key, default=None, cast=None):
        """
        A typed config item.

        :param key: config key
        :param default: returned (uncast) when the key is absent
        :param cast: int, float, bool, str or list
        """
        if key not in self.config or self.config[key] is None:
            return default
        value = self.config[key]
        if cast is None:
            return value
        try:
            if cast is bool:
                return _to_bool(value)
            if cast is list:
                return H.to_list(value)
            return cast(value)
        except (TypeError, ValueError):
            raise InputError('config item {} has a malformed value {!r}'.format(key, value))

    def require(self, key, cast=str):
        value = self.get(key, None, cast)
        if value is None:
            raise InputError('command {} needs config item {}'.format(self.command, key))
        return value

    def period(self, start_key, end_key):
        start = self.get(start_key)
        end = self.get(end_key)
        if start is None and end is None:
            return None
        if start is None or end is None:
            raise InputError('config items {} and {} must be given together'.format(start_key, end_key))
        try:
            return H.parse_period((start, end))
        except InputError as e:
            raise InputError('config items {}/{}: {}'.format(start_key, end_key, e))

    def month_filters(self):
        filters = [str(v) for v in self.get('months', ['annual'], list)]
        for name in filters:
            PeriodMatch.months_of(name)
        return filters

    def months(self):
        """ Union of the calendar months the 'months' filters keep, None for all """

        keep = set()
        for name in self.month_filters():
            months = PeriodMatch.months_of(name)
            if months is None:
                return None
            keep |= months
        return keep

    def resolve(self, path):
        """
        Relative paths are looked up in the working directory, then in
        output_dir, then next to the run-config file.
        """
        if os.path.isabs(path) or os.path.exists(path):
            return path
        candidates = [os.path.join(self.output_dir, path)]
        if self.source:
            candidates.append(os.path.join(os.path.dirname(self.source), path))
        for candidate in candidates:
            if os.path.exists(candidate):
                return candidate
        return path

    def input_path(self, key):
        return self.resolve(self.require(key))

    def output(self, name):
        """
        Staging path of an output file. The file is registered as an
        artifact of this command and only moved to its final name once the
        command has succeeded.
        """
        path = os.path.join(self.output_dir, OUTPUTS.get(name, name))
        if path not in self.artifacts:
            self.artifacts.append(path)
        return path + PARTIAL_SUFFIX

    def execute(self, command):
        """
        Run one command, publish its outputs and write the run manifest.
        A failing command leaves the output directory as it found it.

        :param command: one of COMMANDS
        :return: list of artifact paths
        """
        if command not in COMMANDS:
            raise InputError('unknown command {!r}, expected one of {}'.format(command, ', '.join(COMMANDS)))
        self.command = command
        self.artifacts = list()
        if not os.path.isdir(self.output_dir):
            os.makedirs(self.output_dir)
        log.info('%s: seed %d, config %s', command, self.seed, self.config_hash[:12])
        try:
            getattr(self, '_{}'.format(command))()
        except Exception:
            self.cleanup()
            raise
        self.publish()
        self.write_manifest()
        return list(self.artifacts)

    def publish(self):
        for path in self.artifacts:
            staged = path + PARTIAL_SUFFIX
            if os.path.isfile(staged):
                os.replace(staged, path)

    def cleanup(self):
        """ Remove the staged outputs of the current command; published files stay """

        for path in self.artifacts:
            staged = path + PARTIAL_SUFFIX
            if os.path.isfile(staged):
                os.remove(staged)
                log.debug('removed partial output %s', staged)
        self.artifacts = list()

    def write_manifest(self):
        manifest = {
            'command': self.command,
            'seed': self.seed,
            'config_hash': self.config_hash,
            'software_version': __version__,
            'artifacts': [{'path': os.path.basename(p), 'sha256': _file_digest(p)}
                          for p in self.artifacts if os.path.isfile(p)],
            'logs': list(self.logs),
            'timestamp': datetime.datetime.now(datetime.timezone.utc).strftime('%Y-%m-%dT%H:%M:%SZ'),
        }
        path = os.path.join(self.output_dir, MANIFEST_NAME)
        with open(path, 'w') as f:
            yaml.safe_dump(manifest, f, default_flow_style=False)
        return path

    # synth

    def _grid(self, key, default):
        axis = self.get(key, default, list)
        try:
            start, count, step = float(axis[0]), int(axis[1]), float(axis[2])
        except (IndexError, TypeError, ValueError):
            raise InputError('config item {} must be [start, count, step]'.format(key))
        if count < 1 or step == 0.0:
            raise InputError('config item {} needs a positive count and a non-zero step'.format(key))
        return start + step * np.arange(count), abs(step)

    def synthetic_spec(self):
        lats, lat_step = self._grid('synth_predictor_lats', [50.0, 8, -2.0])
        lons, lon_step = self._grid('synth_predictor_lons', [-110.0, 8, 2.0])
        predictor_geometry = GridGeometry(lats, lons, resolution=lat_step if lat_step == lon_step else None)
        t_lats, t_step = self._grid('synth_predictand_lats', [47.0, 4, -2.0])
        t_lons, _ = self._grid('synth_predictand_lons', [-107.0, 4, 2.0])
        mask = LandMask.full(GridGeometry(t_lats, t_lons, resolution=t_step))
        channels = self.get('synth_channels', ['air-temperature@850', 'geopotential@500',
                                               'specific-humidity@850', 'zonal-wind@500'], list)
        return SyntheticSpec(
            seed=self.get('synth_seed', self.seed, int),
            predictor_geometry=predictor_geometry,
            channels=channels,
            mask=mask,
            radius_km=self.get('locality_radius_km', 450.0, float),
            causal_channel=self.get('synth_causal_channel', 0, int),
            noise_std=self.get('noise_std', 0.0, float),
            start=self.get('synth_start', '2001-01-01', str),
            days=self.get('synth_days', 500, int),
        )

    def _synth(self):
        spec = self.synthetic_spec()
        predictors, predictand, truth = synth_generate(spec)
        provenance = {'synth_seed': spec.seed, 'config_hash': self.config_hash}
        C.save_field(self.output('predictors'), predictors, provenance)
        C.save_target(self.output('predictand'), predictand, provenance)
        C.save_truth(self.output('truth'), truth['weights'], spec.mask, spec.predictor_geometry,
                     spec.causal_channel, spec.radius_km)
        if self.get('synth_gcm_days', 0, int) > 0:
            shift = self.get('synth_gcm_shift', {}) or {}
            if not isinstance(shift, dict):
                raise InputError('config item synth_gcm_shift must map months to degC')
            gcm, reality, _ = synth_pseudo_gcm(
                spec,
                start=self.get('synth_gcm_start', '1981-01-01', str),
                days=self.get('synth_gcm_days', 0, int),
                shift=shift,
                shift_start=self.get('synth_gcm_shift_start', None, str),
                offset=self.get('synth_gcm_offset', 0.0, float),
                scale=self.get('synth_gcm_scale', 1.0, float),
            )
            C.save_field(self.output('gcm_predictors'), gcm, provenance)
            C.save_target(self.output('gcm_predictand'), reality, provenance)
        self.logs.append('synthetic dataset: {} days, {} locations'.format(spec.days, len(spec.mask)))

    # train

    def architecture_config(self, input_shape, mask, predictor_geometry):
        factor = self.get('upsampling_factor', None, int)
        if factor is None:
            factor = 1
            coarse, fine = predictor_geometry.resolution, mask.geometry.resolution
            if coarse and fine:
                factor = max(1, int(round(coarse / fine)))
        return ArchitectureConfig(
            self.get('architecture', 'DeepESD', str),
            input_shape,
            mask=mask,
            width_scale=self.get('width_scale', 1.0, float),
            upsampling_factor=factor,
            pad_input=self.get('pad_input', False, bool),
            seed=self.seed,
        )

    def train_config(self):
        return TrainConfig(
            learning_rate=self.get('learning_rate', 1e-4, float),
            batch_size=self.get('batch_size', 100, int),
            max_epochs=self.get('max_epochs', 1000, int),
            patience=self.get('patience', 30, int),
            min_delta=self.get('min_delta', 0.0, float),
            validation_fraction=self.get('validation_fraction', 0.10, float),
            seed=self.seed,
        )

    def _train(self):
        period = self.period('train_start', 'train_end')
        predictors = C.load_field(self.input_path('predictors_path')).select_times(period)
        predictand = C.load_target(self.input_path('predictand_path')).select_times(period)
        standardizer = fit_standardizer(predictors).rounded()
        self.facts['standardizer'] = standardizer
        standardized = apply_standardizer(predictors, standardizer)
        arch = self.architecture_config(standardized.sample_shape, predictand.mask, predictors.geometry)
        result = train(build_model(arch), standardized, predictand, self.train_config())
        self.facts['train_result'] = result
        self.logs.extend(result.logs)
        provenance = {'best_epoch': result.best_epoch, 'stopped_early': result.stopped_early,
                      'config_hash': self.config_hash}
        C.save_checkpoint(self.output('checkpoint'), result.model, predictand.mask, provenance)
        C.save_standardizer(self.output('standardizer'), standardizer)
        with open(self.output('train_log'), 'w') as f:
            f.write(result.log_text())

    # downscale

    def prepared_predictors(self, standardizer, period=None):
        """
        Predictors of predictors_path, adjusted to the reference monthly
        moments when adjust_gcm is set, then standardized.
        """
        field = C.load_field(self.input_path('predictors_path'))
        if self.get('adjust_gcm', False, bool):
            hist = self.period('hist_start', 'hist_end')
            if hist is None:
                raise InputError('adjust_gcm needs config items hist_start and hist_end')
            reference = C.load_field(self.input_path('reference_predictors_path'))
            obs_period = self.period('train_start', 'train_end')
            field = adjust_gcm_monthly(field, monthly_moments(field, hist, 'gcm historical'),
                                       monthly_moments(reference, obs_period, 'reference'))
            self.logs.append('predictors adjusted to reference monthly moments')
        if field.geometry != standardizer.geometry:
            raise InputError('standardization parameters were fitted on a different geometry')
        return apply_standardizer(field, standardizer).select_times(period, self.months())

    def _load_model(self):
        checkpoint = self.input_path('checkpoint_path')
        model = C.load_checkpoint(checkpoint)
        mask = C.load_checkpoint_mask(checkpoint)
        if mask is None:
            raise InputError('checkpoint {} carries no predictand mask'.format(checkpoint))
        return model, mask

    def _downscale(self):
        model, mask = self._load_model()
        standardizer = C.load_standardizer(self.input_path('standardizer_path'))
        field = self.prepared_predictors(standardizer, self.period('test_start', 'test_end'))
        if len(field) == 0:
            raise InputError('no predictor days to downscale')
        predictions = model.predict_field(field, mask)
        C.save_target(self.output('predictions'), predictions,
                      {'model_id': model.fingerprint(), 'config_hash': self.config_hash})
        self.logs.append('downscaled {} days'.format(len(predictions)))

    # evaluate

    def _evaluate(self):
        period = self.period('test_start', 'test_end')
        pred = C.load_target(self.input_path('predictions_path')).select_times(period)
        obs = C.load_target(self.input_path('observations_path')).select_times(period)
        maps = OrderedDict()
        for index in (ValidationIndex.P02, ValidationIndex.MEAN, ValidationIndex.P98):
            maps['bias_{}'.format(index.value)] = bias_map(pred, obs, index)
        maps['rmse'] = rmse_map(pred, obs)
        for name, values in climatology(obs).items():
            maps['obs_{}'.format(name)] = values
        C.save_maps(self.output('evaluation'), maps, obs.mask, {'days': len(obs)})
        lines = ['map\tspatial_mean_abs']
        for name, values in maps.items():
            if name.startswith('bias_') or name == 'rmse':
                lines.append('{}\t{!r}'.format(name, spatial_mean_abs(values)))
        with open(self.output('evaluation_table'), 'w') as f:
            f.write('\n'.join(lines) + '\n')
        self.facts['evaluation'] = maps

    # explain

    def _baseline(self, standardizer):
        baseline = self.get('ig_baseline', 'zeros', str)
        if baseline == 'zeros':
            return None
        return apply_standardizer(C.load_field(self.resolve(baseline)), standardizer).data[0]

    def _explain(self):
        model, mask = self._load_model()
        standardizer = C.load_standardizer(self.input_path('standardizer_path'))
        field = self.prepared_predictors(standardizer, self.period('test_start', 'test_end'))
        if len(field) == 0:
            raise InputError('the explain period selects no days')
        locations = self.get('saliency_locations', None, list)
        cubes = saliency_cubes(model, field, self._baseline(standardizer), self.get('ig_steps', DEFAULT_STEPS, int),
                               locations)
        empty_days = sum(1 for cube in cubes if cube.empty_locations)
        if empty_days:
            self.logs.append('all-zero saliency for some locations on {} of {} days'.format(empty_days, len(cubes)))
        self.facts['saliency_cubes'] = cubes
        C.save_cubes(self.output('cubes'), cubes)
        aggregation = self.get('aggregation', 'mean', str)
        C.save_asm(self.output('asm'), accumulate_asm(cubes, aggregation))
        if locations is None:
            sdm = compute_sdm(cubes, field.geometry, mask,
                              channel=self.get('sdm_channel', None, int),
                              combine_channels=self.get('sdm_combine_channels', False, bool),
                              normalized=self.get('sdm_normalized', False, bool),
                              aggregation=aggregation)
            C.save_sdm(self.output('sdm'), sdm, mask)
        else:
            self.logs.append('saliency restricted to {} locations; SDM skipped'.format(len(locations)))

    # delta

    def _delta(self):
        model_series = C.load_target(self.input_path('model_predictions_path'))
        gcm_series = C.load_target(self.input_path('gcm_predictand_path'))
        regions = RegionSet.load(self.input_path('regions_path'))
        hist = self.period('hist_start', 'hist_end')
        if hist is None:
            raise InputError('command delta needs config items hist_start and hist_end')
        futures = [H.parse_period(p) for p in self.get('future_periods', [], list)]
        if not futures:
            raise InputError('command delta needs config item future_periods')
        indices = self.get('delta_indices', ['MEAN', 'P02', 'P98'], list)
        filters = self.month_filters()
        weighted = self.get('latitude_weighted', False, bool)
        model_deltas = regional_deltas(model_series, regions, hist, futures, indices, filters, weighted)
        gcm_deltas = regional_deltas(gcm_series, regions, hist, futures, indices, filters, weighted)
        report = pseudo_reality_report(model_deltas, gcm_deltas, regions, futures,
                                       self.get('delta_threshold_degc', DELTA_THRESHOLD_DEGC, float))
        self.facts['delta_report'] = report
        C.save_report(self.output('delta_report'), report)
        with open(self.output('delta_table'), 'w') as f:
            f.write(report.to_text())
        self.logs.append('delta report: {} rows, {} flagged'.format(len(report), len(report.flagged)))

    # render

    def _render(self):
        box = C.read_container(self.input_path('render_input'))
        names = [n for n in box.arrays if n not in ('mask', C.MASK_ARRAY)]
        name = self.get('render_array', names[0] if names else None, str)
        if name is None:
            raise InputError('container {} holds no array to render'.format(self.get('render_input')))
        values = np.asarray(box[name], dtype=np.float64)
        for i in self.get('render_index', [], list):
            if not 0 <= int(i) < values.shape[0]:
                raise InputError('render_index {} out of range for axis of length {}'.format(i, values.shape[0]))
            values = values[int(i)]
        geometry = GridGeometry.from_dict(box.metadata['geometry']) if box.metadata.get('geometry') else None
        if values.ndim == 1 and geometry is not None and 'mask' in box.arrays:
            mask = LandMask(geometry, box['mask'] > 0.5)
            values = mask.scatter(values, fill=float(values.min()) if values.size else 0.0)
        if values.ndim != 2:
            raise InputError('render needs a 2-D slice, got shape {}; set render_index'.format(values.shape))
        render_heatmap(values, self.output(self.get('render_output', 'heatmap', str)), geometry)
