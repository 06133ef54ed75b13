from django.contrib import admin
from .models import ExperimentRun, CheckResult


class ReadOnlyAdminMixin:
    """Run records are written by the runner only"""

    def has_add_permission(self, request, obj=None):
        return False

    def has_change_permission(self, request, obj=None):
        return False


class CheckResultInline(ReadOnlyAdminMixin, admin.TabularInline):
    model = CheckResult
    extra = 0
    fields = ('check_name', 'verdict', 'expected', 'passed', 'sample_count', 'wall_clock')
    readonly_fields = fields
    can_delete = False


@admin.register(ExperimentRun)
class ExperimentRunAdmin(ReadOnlyAdminMixin, admin.ModelAdmin):
    """Admin interface for ExperimentRun model"""
    list_display = ('name', 'kind', 'status', 'passed', 'seed', 'threads', 'version', 'started_at')
    list_filter = ('kind', 'status', 'passed', 'started_at')
    search_fields = ('name', 'config_digest', 'config_path')
    inlines = [CheckResultInline]

    fieldsets = (
        ('Experiment', {
            'fields': ('name', 'kind', 'config_path', 'config_digest', 'seed', 'threads', 'version')
        }),
        ('Outcome', {
            'fields': ('status', 'passed', 'error_message', 'output_dir')
        }),
        ('Timestamps', {
            'fields': ('started_at', 'finished_at'),
            'classes': ('collapse',)
        }),
    )
    readonly_fields = ('started_at', 'finished_at')


@admin.register(CheckResult)
class CheckResultAdmin(ReadOnlyAdminMixin, admin.ModelAdmin):
    """Admin interface for CheckResult model"""
    list_display = ('run', 'check_name', 'verdict', 'expected', 'passed', 'sample_count', 'wall_clock')
    list_filter = ('check_name', 'verdict', 'passed')
    search_fields = ('run__name', 'check_name', 'inputs_digest')
